#pragma once

#include <string>
#include <vector>

#include "modbal/errors.hpp"

namespace modbal {

/// Exhaustive token tagging. Text covers instruction tokens; generated
/// response tokens sit past the layout and carry no tag at all, so every
/// mass computation and reallocation leaves them untouched.
enum class ModalityTag { Visual, Audio, Text };

inline const char* tag_name(ModalityTag t) {
  switch (t) {
    case ModalityTag::Visual: return "visual";
    case ModalityTag::Audio: return "audio";
    case ModalityTag::Text: return "text";
  }
  return "?";
}

struct ModalitySpan {
  ModalityTag tag;
  int start = 0;
  int length = 0;
};

/// Ordered modality spans over a token sequence: disjoint, contiguous and
/// covering [0, total). Zero-length spans are legal.
class TokenLayout {
 public:
  TokenLayout() = default;

  explicit TokenLayout(std::vector<ModalitySpan> spans) : spans_(std::move(spans)) {
    int pos = 0;
    for (size_t i = 0; i < spans_.size(); ++i) {
      const ModalitySpan& s = spans_[i];
      if (s.length < 0) {
        throw ValidationError("layout: span " + std::to_string(i) +
                              " has negative length");
      }
      if (s.start != pos) {
        throw ValidationError("layout: span " + std::to_string(i) +
                              " starts at " + std::to_string(s.start) +
                              ", expected " + std::to_string(pos) +
                              " (spans must be contiguous and disjoint)");
      }
      pos += s.length;
    }
    total_ = pos;
    for (const ModalitySpan& s : spans_) {
      switch (s.tag) {
        case ModalityTag::Visual: visual_ += s.length; break;
        case ModalityTag::Audio: audio_ += s.length; break;
        case ModalityTag::Text: text_ += s.length; break;
      }
    }
    if (text_ < 1) {
      throw ValidationError("layout: requires at least one text token");
    }
    tags_.reserve(size_t(total_));
    for (const ModalitySpan& s : spans_) {
      for (int i = 0; i < s.length; ++i) tags_.push_back(s.tag);
    }
  }

  /// Visual block, then audio, then text.
  static TokenLayout contiguous(int m, int n, int s) {
    return TokenLayout({{ModalityTag::Visual, 0, m},
                        {ModalityTag::Audio, m, n},
                        {ModalityTag::Text, m + n, s}});
  }

  int total() const { return total_; }
  int visual_count() const { return visual_; }
  int audio_count() const { return audio_; }
  int text_count() const { return text_; }
  const std::vector<ModalitySpan>& spans() const { return spans_; }

  ModalityTag tag_at(int pos) const {
    if (pos < 0 || pos >= total_) {
      throw IndexError("layout: position " + std::to_string(pos) +
                       " outside [0, " + std::to_string(total_) + ")");
    }
    return tags_[size_t(pos)];
  }

  bool operator==(const TokenLayout& o) const {
    if (spans_.size() != o.spans_.size()) return false;
    for (size_t i = 0; i < spans_.size(); ++i) {
      if (spans_[i].tag != o.spans_[i].tag ||
          spans_[i].start != o.spans_[i].start ||
          spans_[i].length != o.spans_[i].length) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<ModalitySpan> spans_;
  std::vector<ModalityTag> tags_;
  int total_ = 0;
  int visual_ = 0;
  int audio_ = 0;
  int text_ = 0;
};

}  // namespace modbal
