#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "modbal/attention.hpp"
#include "modbal/errors.hpp"
#include "modbal/modality.hpp"

namespace modbal {

// Attention-dump document:
//   {"meta": {"model": str,
//             "layout": [{"tag": "visual"|"audio"|"text",
//                         "start": int, "length": int}, ...],
//             "num_layers": int, "num_heads": int},
//    "steps": [{"keys": int, "weights": [[[f,...],...],...]}, ...]}
// weights indexed [layer][head][key]. Floats carry 17 significant digits so
// the write/parse round trip preserves every weight bit-exactly.

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[40];
  int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  out.append(buf, size_t(n));
}

inline void append_json_string(std::string& out, std::string_view s) {
  out.push_back('"');
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(c);
        }
    }
  }
  out.push_back('"');
}

using json = nlohmann::json;

inline const json& get_field(const json& j, const char* key,
                             const std::string& path) {
  if (!j.is_object()) throw ParseError(path + ": expected object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(path + "." + key + ": missing");
  return *it;
}

inline int get_int(const json& j, const char* key, const std::string& path) {
  const json& f = get_field(j, key, path);
  if (!f.is_number_integer()) {
    throw ParseError(path + "." + key + ": expected integer");
  }
  return f.get<int>();
}

inline std::string get_string(const json& j, const char* key,
                              const std::string& path) {
  const json& f = get_field(j, key, path);
  if (!f.is_string()) throw ParseError(path + "." + key + ": expected string");
  return f.get<std::string>();
}

inline ModalityTag parse_tag(const std::string& s, const std::string& path) {
  if (s == "visual") return ModalityTag::Visual;
  if (s == "audio") return ModalityTag::Audio;
  if (s == "text") return ModalityTag::Text;
  throw ParseError(path + ": unknown modality tag \"" + s + "\"");
}

}  // namespace detail

inline std::string write_dump(const AttentionDump& dump) {
  std::string out;
  out.reserve(256 + dump.steps.size() * size_t(dump.num_layers) *
                        size_t(dump.num_heads) * 8);
  out += "{\"meta\":{\"model\":";
  detail::append_json_string(out, dump.model);
  out += ",\"layout\":[";
  bool first = true;
  for (const ModalitySpan& s : dump.layout.spans()) {
    if (!first) out.push_back(',');
    first = false;
    out += "{\"tag\":\"";
    out += tag_name(s.tag);
    out += "\",\"start\":";
    out += std::to_string(s.start);
    out += ",\"length\":";
    out += std::to_string(s.length);
    out.push_back('}');
  }
  out += "],\"num_layers\":";
  out += std::to_string(dump.num_layers);
  out += ",\"num_heads\":";
  out += std::to_string(dump.num_heads);
  out += "},\"steps\":[";
  for (size_t si = 0; si < dump.steps.size(); ++si) {
    const StepAttention& step = dump.steps[si];
    if (si) out.push_back(',');
    out += "{\"keys\":";
    out += std::to_string(step.keys);
    out += ",\"weights\":[";
    for (int l = 0; l < step.layers; ++l) {
      if (l) out.push_back(',');
      out.push_back('[');
      for (int h = 0; h < step.heads; ++h) {
        if (h) out.push_back(',');
        out.push_back('[');
        std::span<const double> row = step.row(l, h);
        for (int k = 0; k < step.keys; ++k) {
          if (k) out.push_back(',');
          detail::append_double(out, row[size_t(k)]);
        }
        out.push_back(']');
      }
      out.push_back(']');
    }
    out += "]}";
  }
  out += "]}";
  out.push_back('\n');
  return out;
}

inline AttentionDump parse_dump(std::string_view text) {
  detail::json doc;
  try {
    doc = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw ParseError(std::string("dump: invalid JSON: ") + e.what());
  }

  AttentionDump dump;
  const detail::json& meta = detail::get_field(doc, "meta", "$");
  dump.model = detail::get_string(meta, "model", "$.meta");
  dump.num_layers = detail::get_int(meta, "num_layers", "$.meta");
  dump.num_heads = detail::get_int(meta, "num_heads", "$.meta");
  if (dump.num_layers <= 0 || dump.num_heads <= 0) {
    throw ParseError("$.meta: num_layers and num_heads must be positive");
  }

  const detail::json& jlayout = detail::get_field(meta, "layout", "$.meta");
  if (!jlayout.is_array()) throw ParseError("$.meta.layout: expected array");
  std::vector<ModalitySpan> spans;
  for (size_t i = 0; i < jlayout.size(); ++i) {
    const std::string path = "$.meta.layout[" + std::to_string(i) + "]";
    const detail::json& js = jlayout[i];
    ModalitySpan s;
    s.tag = detail::parse_tag(detail::get_string(js, "tag", path), path);
    s.start = detail::get_int(js, "start", path);
    s.length = detail::get_int(js, "length", path);
    spans.push_back(s);
  }
  dump.layout = TokenLayout(std::move(spans));

  const detail::json& jsteps = detail::get_field(doc, "steps", "$");
  if (!jsteps.is_array()) throw ParseError("$.steps: expected array");
  for (size_t si = 0; si < jsteps.size(); ++si) {
    const std::string spath = "$.steps[" + std::to_string(si) + "]";
    const detail::json& js = jsteps[si];
    const int keys = detail::get_int(js, "keys", spath);
    if (keys <= 0) throw ParseError(spath + ".keys: must be positive");
    const detail::json& jw = detail::get_field(js, "weights", spath);
    if (!jw.is_array() || int(jw.size()) != dump.num_layers) {
      throw ParseError(spath + ".weights: expected " +
                       std::to_string(dump.num_layers) + " layers");
    }
    StepAttention step(dump.num_layers, dump.num_heads, keys);
    for (int l = 0; l < dump.num_layers; ++l) {
      const detail::json& jl = jw[size_t(l)];
      const std::string lpath = spath + ".weights[" + std::to_string(l) + "]";
      if (!jl.is_array() || int(jl.size()) != dump.num_heads) {
        throw ParseError(lpath + ": expected " +
                         std::to_string(dump.num_heads) + " heads");
      }
      for (int h = 0; h < dump.num_heads; ++h) {
        const detail::json& jh = jl[size_t(h)];
        const std::string hpath = lpath + "[" + std::to_string(h) + "]";
        if (!jh.is_array() || int(jh.size()) != keys) {
          throw ParseError(hpath + ": expected " + std::to_string(keys) +
                           " weights");
        }
        std::span<double> row = step.row(l, h);
        for (int k = 0; k < keys; ++k) {
          const detail::json& jv = jh[size_t(k)];
          if (!jv.is_number()) {
            throw ParseError(hpath + "[" + std::to_string(k) +
                             "]: expected number");
          }
          row[size_t(k)] = jv.get<double>();
        }
      }
    }
    dump.steps.push_back(std::move(step));
  }

  validate_dump(dump);
  return dump;
}

inline AttentionDump read_dump_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dump file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_dump(ss.str());
}

inline void write_dump_file(const AttentionDump& dump, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot open for writing: " + path);
  out << write_dump(dump);
}

}  // namespace modbal
