#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "modbal/analysis.hpp"
#include "modbal/attention.hpp"
#include "modbal/rng.hpp"

using namespace modbal;

namespace {

// Independent per-token summation: walks every (head, key) pair and asks the
// layout for each key's tag, never using span arithmetic.
std::pair<double, double> uap_bruteforce(const StepAttention& step,
                                         const TokenLayout& layout, int layer) {
  double v = 0.0, a = 0.0;
  for (int h = 0; h < step.heads; ++h) {
    auto row = step.row(layer, h);
    for (int k = 0; k < layout.total(); ++k) {
      if (layout.tag_at(k) == ModalityTag::Visual) v += row[size_t(k)];
      if (layout.tag_at(k) == ModalityTag::Audio) a += row[size_t(k)];
    }
  }
  return {v / step.heads, a / step.heads};
}

StepAttention random_step(Rng& rng, int layers, int heads,
                          const TokenLayout& layout,
                          double audio_tilt_lo = 0.0,
                          double audio_tilt_hi = 0.0) {
  StepAttention step(layers, heads, layout.total());
  for (int l = 0; l < layers; ++l) {
    for (int h = 0; h < heads; ++h) {
      auto row = step.row(l, h);
      const double tilt = std::exp(rng.uniform(audio_tilt_lo, audio_tilt_hi));
      double sum = 0.0;
      for (int k = 0; k < layout.total(); ++k) {
        double w = -std::log(1.0 - rng.next_double());
        if (layout.tag_at(k) == ModalityTag::Audio) w *= tilt;
        row[size_t(k)] = w;
        sum += w;
      }
      for (double& w : row) w /= sum;
    }
  }
  return step;
}

AttentionDump wrap_dump(StepAttention step, const TokenLayout& layout) {
  AttentionDump dump;
  dump.model = "synthetic";
  dump.layout = layout;
  dump.num_layers = step.layers;
  dump.num_heads = step.heads;
  dump.steps.push_back(std::move(step));
  return dump;
}

}  // namespace

TEST_CASE("uap on hand cases") {
  TokenLayout lay = TokenLayout::contiguous(2, 1, 1);

  StepAttention one(1, 1, 4);
  one.row(0, 0)[2] = 1.0;  // all weight on the audio token
  auto [v, a] = uap(one, lay, 0);
  REQUIRE(v == 0.0);
  REQUIRE(a == 1.0);

  StepAttention two(1, 2, 4);
  // head 0: 0.4 visual, 0.1 audio; head 1: 0.2 visual, 0.3 audio
  two.row(0, 0)[0] = 0.4;
  two.row(0, 0)[2] = 0.1;
  two.row(0, 0)[3] = 0.5;
  two.row(0, 1)[0] = 0.2;
  two.row(0, 1)[2] = 0.3;
  two.row(0, 1)[3] = 0.5;
  auto [v2, a2] = uap(two, lay, 0);
  REQUIRE(v2 == Catch::Approx(0.3).margin(1e-15));
  REQUIRE(a2 == Catch::Approx(0.2).margin(1e-15));
}

TEST_CASE("uap equals brute-force oracle on random steps") {
  TokenLayout lay = TokenLayout::contiguous(7, 3, 4);
  Rng rng(1001);
  for (int trial = 0; trial < 25; ++trial) {
    StepAttention step = random_step(rng, 4, 3, lay, -1.0, 2.0);
    for (int l = 0; l < step.layers; ++l) {
      auto fast = uap(step, lay, l);
      auto slow = uap_bruteforce(step, lay, l);
      REQUIRE(std::abs(fast.first - slow.first) <= 1e-12);
      REQUIRE(std::abs(fast.second - slow.second) <= 1e-12);
      REQUIRE(fast.first + fast.second <= 1.0 + 1e-9);
      REQUIRE(fast.first + fast.second >= 0.0);
    }
  }
}

TEST_CASE("mid layer uap averages per-layer values") {
  TokenLayout lay = TokenLayout::contiguous(3, 2, 2);
  Rng rng(5);
  AttentionDump dump = wrap_dump(random_step(rng, 6, 2, lay), lay);

  auto single = mid_layer_uap(dump, 0, {2, 2});
  auto direct = uap(dump.steps[0], lay, 2);
  REQUIRE(single.first == direct.first);
  REQUIRE(single.second == direct.second);

  auto two = mid_layer_uap(dump, 0, {1, 2});
  auto l1 = uap(dump.steps[0], lay, 1);
  auto l2 = uap(dump.steps[0], lay, 2);
  REQUIRE(two.second ==
          Catch::Approx(0.5 * (l1.second + l2.second)).margin(1e-15));

  REQUIRE_THROWS_AS(mid_layer_uap(dump, 0, {3, 2}), ArgumentError);
  REQUIRE_THROWS_AS(mid_layer_uap(dump, 0, {0, 6}), IndexError);
  REQUIRE_THROWS_AS(mid_layer_uap(dump, 2, {0, 1}), IndexError);
}

TEST_CASE("audio-dominated dump shows uap_a above uap_v") {
  TokenLayout lay = TokenLayout::contiguous(8, 2, 4);
  Rng rng(31337);
  AttentionDump dump = wrap_dump(random_step(rng, 9, 4, lay, 2.5, 3.5), lay);
  auto mid = mid_layer_uap(dump, 0, default_mid_range(9));
  REQUIRE(mid.second > mid.first);

  // the audio positions carry the top per-token profile values
  auto profile = per_token_profile(dump, 0, default_mid_range(9));
  double max_audio = 0.0, max_other = 0.0;
  for (int k = 0; k < lay.total(); ++k) {
    if (lay.tag_at(k) == ModalityTag::Audio) {
      max_audio = std::max(max_audio, profile[size_t(k)]);
    } else {
      max_other = std::max(max_other, profile[size_t(k)]);
    }
  }
  REQUIRE(max_audio > max_other);
}

TEST_CASE("per token profile basics") {
  TokenLayout lay = TokenLayout::contiguous(1, 1, 2);
  StepAttention step(2, 1, 4);
  for (int l = 0; l < 2; ++l) {
    auto row = step.row(l, 0);
    row[0] = 0.1; row[1] = 0.2; row[2] = 0.3; row[3] = 0.4;
  }
  AttentionDump dump = wrap_dump(step, lay);

  // single layer, single head: that head's row
  auto p = per_token_profile(dump, 0, {0, 0});
  REQUIRE(p == std::vector<double>{0.1, 0.2, 0.3, 0.4});

  // uniform rows stay uniform
  StepAttention uni(3, 2, 4);
  for (int l = 0; l < 3; ++l) {
    for (int h = 0; h < 2; ++h) {
      for (double& w : uni.row(l, h)) w = 0.25;
    }
  }
  AttentionDump udump = wrap_dump(uni, lay);
  for (double x : per_token_profile(udump, 0, {0, 2})) {
    REQUIRE(x == Catch::Approx(0.25).margin(1e-15));
  }
}

TEST_CASE("head and layer ratios with degenerate masses") {
  TokenLayout lay = TokenLayout::contiguous(2, 2, 1);
  StepAttention step(1, 2, 5);
  // head 0: S_A = 0.6, S_V = 0.2
  step.row(0, 0)[0] = 0.1; step.row(0, 0)[1] = 0.1;
  step.row(0, 0)[2] = 0.4; step.row(0, 0)[3] = 0.2;
  step.row(0, 0)[4] = 0.2;
  REQUIRE(head_ratio(step, 0, 0, lay) == Catch::Approx(3.0).margin(1e-12));

  // head 1: no audio
  step.row(0, 1)[0] = 0.25; step.row(0, 1)[1] = 0.25;
  step.row(0, 1)[4] = 0.5;
  REQUIRE(head_ratio(step, 0, 1, lay) == 0.0);

  // zero visual but positive audio is +infinity
  StepAttention inf_step(1, 1, 5);
  inf_step.row(0, 0)[2] = 0.3;
  inf_step.row(0, 0)[4] = 0.7;
  REQUIRE(std::isinf(head_ratio(inf_step, 0, 0, lay)));

  // both zero is defined 0
  StepAttention z(1, 1, 5);
  z.row(0, 0)[4] = 1.0;
  REQUIRE(head_ratio(z, 0, 0, lay) == 0.0);
}

TEST_CASE("layer ratio aggregates masses over heads first") {
  TokenLayout lay = TokenLayout::contiguous(2, 2, 1);
  StepAttention step(1, 2, 5);
  // head 0 masses (A, V) = (0.3, 0.1); head 1 (0.1, 0.3)
  step.row(0, 0)[2] = 0.3; step.row(0, 0)[0] = 0.1; step.row(0, 0)[4] = 0.6;
  step.row(0, 1)[2] = 0.1; step.row(0, 1)[0] = 0.3; step.row(0, 1)[4] = 0.6;
  REQUIRE(layer_ratio(step, 0, lay) == Catch::Approx(1.0).margin(1e-12));

  // all-visual heads give 0
  StepAttention vis(1, 2, 5);
  for (int h = 0; h < 2; ++h) {
    vis.row(0, h)[0] = 0.5;
    vis.row(0, h)[4] = 0.5;
  }
  REQUIRE(layer_ratio(vis, 0, lay) == 0.0);

  // random step: equals mass-summation oracle
  Rng rng(77);
  TokenLayout big = TokenLayout::contiguous(6, 3, 3);
  StepAttention rs = random_step(rng, 2, 4, big, 0.0, 1.5);
  for (int l = 0; l < 2; ++l) {
    double a = 0.0, v = 0.0;
    for (int h = 0; h < 4; ++h) {
      for (int k = 0; k < big.total(); ++k) {
        if (big.tag_at(k) == ModalityTag::Audio) a += rs.row(l, h)[size_t(k)];
        if (big.tag_at(k) == ModalityTag::Visual) v += rs.row(l, h)[size_t(k)];
      }
    }
    REQUIRE(std::abs(layer_ratio(rs, l, big) - a / v) <= 1e-12);
  }
}

TEST_CASE("biased heads follow the two-level gate") {
  TokenLayout lay = TokenLayout::contiguous(2, 2, 1);
  // Construct a layer with c = 2 and head ratios {3, ~1.4}
  StepAttention step(1, 2, 5);
  step.row(0, 0)[0] = 0.1; step.row(0, 0)[1] = 0.1;   // S_V = 0.2
  step.row(0, 0)[2] = 0.6;                             // S_A = 0.6, c_h = 3
  step.row(0, 0)[4] = 0.2;
  step.row(0, 1)[0] = 0.25;                            // S_V = 0.25
  step.row(0, 1)[2] = 0.35;                            // S_A = 0.35, c_h = 1.4
  step.row(0, 1)[4] = 0.4;
  // c = (0.95)/(0.45) ≈ 2.11
  auto biased = biased_heads(step, 0, lay, 1.0);
  REQUIRE(biased == std::vector<int>{0});

  // layer gate failing yields the empty set
  REQUIRE(biased_heads(step, 0, lay, 5.0).empty());
  REQUIRE_THROWS_AS(biased_heads(step, 0, lay, -1.0), ArgumentError);
}

TEST_CASE("biased heads are monotone non-increasing in tau") {
  TokenLayout lay = TokenLayout::contiguous(5, 2, 3);
  Rng rng(4242);
  for (int trial = 0; trial < 40; ++trial) {
    StepAttention step = random_step(rng, 3, 6, lay, -0.5, 3.0);
    for (int l = 0; l < step.layers; ++l) {
      std::vector<double> taus = {0.0, 0.5, 1.0, 2.0, 4.0};
      for (size_t i = 0; i + 1 < taus.size(); ++i) {
        auto lo = biased_heads(step, l, lay, taus[i]);
        auto hi = biased_heads(step, l, lay, taus[i + 1]);
        std::set<int> lo_set(lo.begin(), lo.end());
        for (int h : hi) REQUIRE(lo_set.count(h) == 1);
      }
    }
  }
}

TEST_CASE("mediant property bounds the layer ratio") {
  TokenLayout lay = TokenLayout::contiguous(4, 2, 2);
  Rng rng(909);
  for (int trial = 0; trial < 60; ++trial) {
    StepAttention step = random_step(rng, 2, 5, lay, -1.0, 2.0);
    for (int l = 0; l < step.layers; ++l) {
      const double c = layer_ratio(step, l, lay);
      double mn = std::numeric_limits<double>::infinity(), mx = 0.0;
      for (int h = 0; h < step.heads; ++h) {
        const double ch = head_ratio(step, l, h, lay);
        mn = std::min(mn, ch);
        mx = std::max(mx, ch);
      }
      REQUIRE(c >= mn - 1e-12);
      REQUIRE(c <= mx + 1e-12);

      // hence a gated layer never marks every head as biased
      auto biased = biased_heads(step, l, lay, 0.0);
      REQUIRE(biased.size() < size_t(step.heads));
    }
  }
}

TEST_CASE("default mid range is the central third") {
  REQUIRE(default_mid_range(8) == std::pair<int, int>{2, 4});
  REQUIRE(default_mid_range(9) == std::pair<int, int>{3, 5});
  REQUIRE(default_mid_range(1) == std::pair<int, int>{0, 0});
  REQUIRE(default_mid_range(2) == std::pair<int, int>{0, 0});
}

TEST_CASE("analysis report JSON carries the fixed field names") {
  TokenLayout lay = TokenLayout::contiguous(3, 1, 2);
  Rng rng(8);
  AttentionDump dump = wrap_dump(random_step(rng, 6, 2, lay, 1.0, 3.0), lay);
  nlohmann::json j = analysis_report_json(dump, 0, default_mid_range(6), 1.0);
  REQUIRE(j.contains("uap"));
  REQUIRE(j.contains("ratios"));
  REQUIRE(j.contains("biased_heads"));
  REQUIRE(j["uap"].contains("per_layer"));
  REQUIRE(j["uap"].contains("mid_layer_avg"));
  REQUIRE(j["ratios"].contains("per_layer"));
  REQUIRE(j["ratios"].contains("per_head"));
  REQUIRE(j["uap"]["per_layer"].size() == 6);
}
