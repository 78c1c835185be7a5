#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "seqforge/config/config_node.hpp"

namespace seqforge {

// Grammar: nested maps by 2-space indentation (`key: value` / `key:` + block),
// lists of scalars by `- item`, `#` comments outside quotes, blank lines
// ignored. `{}` and `[]` denote an empty map and an empty list.

namespace config_detail {

struct Line {
  std::size_t number;  // 1-based
  std::size_t indent;
  std::string body;
};

inline bool is_int_literal(std::string_view s) {
  static const std::regex re(R"([-+]?[0-9]+)");
  return std::regex_match(s.begin(), s.end(), re);
}

inline bool is_float_literal(std::string_view s) {
  static const std::regex re(R"([-+]?([0-9]+\.[0-9]*|\.[0-9]+|[0-9]+)([eE][-+]?[0-9]+)?)");
  return std::regex_match(s.begin(), s.end(), re);
}

/// Strips a trailing comment, honouring quotes.
inline std::string strip_comment(std::string_view s, std::size_t line) {
  char quote = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (quote) {
      if (c == '\\' && quote == '"') ++i;
      else if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '#') {
      return std::string(s.substr(0, i));
    }
  }
  if (quote) throw ParseError(line, "unterminated quoted string");
  return std::string(s);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  return s;
}

inline std::string unquote(std::string_view s, std::size_t line) {
  const char q = s.front();
  if (s.size() < 2 || s.back() != q) throw ParseError(line, "malformed quoted string");
  std::string out;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    char c = s[i];
    if (q == '"' && c == '\\') {
      if (i + 2 >= s.size()) throw ParseError(line, "dangling escape");
      c = s[++i];
      switch (c) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case '\\': case '"': out += c; break;
        default: throw ParseError(line, std::string("unknown escape \\") + c);
      }
    } else if (c == q) {
      throw ParseError(line, "unexpected quote inside string");
    } else {
      out += c;
    }
  }
  return out;
}

inline ConfigNode parse_scalar(std::string_view text, std::size_t line) {
  if (text.empty()) return ConfigNode(std::string());
  if (text.front() == '"' || text.front() == '\'') return ConfigNode(unquote(text, line));
  if (text == "{}") return ConfigNode::map();
  if (text == "[]") return ConfigNode::list();
  if (is_int_literal(text)) {
    std::int64_t v = 0;
    const char* first = text.data() + (text.front() == '+' ? 1 : 0);
    const auto [p, ec] = std::from_chars(first, text.data() + text.size(), v);
    if (ec != std::errc()) throw ParseError(line, "integer out of range: " + std::string(text));
    return ConfigNode(v);
  }
  if (is_float_literal(text)) {
    double v = 0;
    const char* first = text.data() + (text.front() == '+' ? 1 : 0);
    const auto [p, ec] = std::from_chars(first, text.data() + text.size(), v);
    if (ec != std::errc() || !std::isfinite(v))
      throw ParseError(line, "float out of range: " + std::string(text));
    return ConfigNode(v);
  }
  if (text == "true") return ConfigNode(true);
  if (text == "false") return ConfigNode(false);
  return ConfigNode(std::string(text));
}

class Parser {
 public:
  explicit Parser(std::string_view text) {
    std::size_t number = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      std::string_view raw = text.substr(start, end - start);
      ++number;
      start = end + 1;
      if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
      if (raw.find('\t') != std::string_view::npos) throw ParseError(number, "tab character");
      const std::string body = strip_comment(raw, number);
      const auto first = body.find_first_not_of(' ');
      if (first == std::string::npos) {
        if (end == text.size()) break;
        continue;
      }
      std::string rest(trim(std::string_view(body).substr(first)));
      if (first % 2) throw ParseError(number, "indentation must be a multiple of 2 spaces");
      lines_.push_back({number, first, std::move(rest)});
      if (end == text.size()) break;
    }
  }

  ConfigNode parse() {
    if (lines_.empty()) return ConfigNode::map();
    if (lines_[0].indent != 0) throw ParseError(lines_[0].number, "unexpected indentation");
    ConfigNode root = block(0);
    if (pos_ < lines_.size()) throw ParseError(lines_[pos_].number, "inconsistent indentation");
    return root;
  }

 private:
  static bool is_item(const std::string& body) { return body == "-" || body.rfind("- ", 0) == 0; }

  ConfigNode block(std::size_t indent) {
    return is_item(lines_[pos_].body) ? list_block(indent) : map_block(indent);
  }

  ConfigNode list_block(std::size_t indent) {
    ConfigNode node = ConfigNode::list();
    while (pos_ < lines_.size() && lines_[pos_].indent == indent) {
      const Line& line = lines_[pos_];
      if (!is_item(line.body)) throw ParseError(line.number, "expected '- item' in list");
      const std::string_view item = trim(std::string_view(line.body).substr(1));
      if (item.empty()) throw ParseError(line.number, "empty list item");
      if (is_item(std::string(item))) throw ParseError(line.number, "nested lists are not supported");
      const bool quoted = item.front() == '"' || item.front() == '\'';
      if (!quoted && (item.find(": ") != std::string_view::npos || item.back() == ':'))
        throw ParseError(line.number, "list items must be scalars");
      node.push_back(parse_scalar(item, line.number));
      ++pos_;
    }
    return node;
  }

  ConfigNode map_block(std::size_t indent) {
    ConfigNode node = ConfigNode::map();
    while (pos_ < lines_.size() && lines_[pos_].indent == indent) {
      const Line& line = lines_[pos_];
      if (is_item(line.body)) throw ParseError(line.number, "list item inside a map");
      std::string key;
      std::string_view value;
      const auto sep = line.body.find(": ");
      if (sep != std::string::npos) {
        key = line.body.substr(0, sep);
        value = trim(std::string_view(line.body).substr(sep + 2));
      } else if (line.body.back() == ':') {
        key = line.body.substr(0, line.body.size() - 1);
      } else {
        throw ParseError(line.number, "expected 'key: value'");
      }
      if (key.empty() || key.find_first_of(" \"'") != std::string::npos)
        throw ParseError(line.number, "invalid key '" + key + "'");
      if (node.contains(key)) throw ParseError(line.number, "duplicate key '" + key + "'");
      ++pos_;
      if (!value.empty()) {
        if (pos_ < lines_.size() && lines_[pos_].indent > indent)
          throw ParseError(lines_[pos_].number, "inconsistent indentation");
        node.set(key, parse_scalar(value, line.number));
        continue;
      }
      if (pos_ >= lines_.size() || lines_[pos_].indent <= indent)
        throw ParseError(line.number, "key '" + key + "' has no value");
      if (lines_[pos_].indent != indent + 2)
        throw ParseError(lines_[pos_].number, "inconsistent indentation");
      node.set(key, block(indent + 2));
    }
    if (pos_ < lines_.size() && lines_[pos_].indent > indent)
      throw ParseError(lines_[pos_].number, "inconsistent indentation");
    return node;
  }

  std::vector<Line> lines_;
  std::size_t pos_ = 0;
};

inline bool needs_quotes(const std::string& s) {
  if (s.empty() || s.front() == ' ' || s.back() == ' ') return true;
  if (s == "true" || s == "false" || s == "{}" || s == "[]" || s == "-") return true;
  if (is_int_literal(s) || is_float_literal(s)) return true;
  if (s.rfind("- ", 0) == 0 || s.back() == ':') return true;
  return s.find_first_of("#\"'\\\n\t") != std::string::npos || s.find(": ") != std::string::npos;
}

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out + '"';
}

inline std::string format_float(double v) {
  if (!std::isfinite(v)) throw ConfigError("cannot serialize non-finite float");
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

inline std::string scalar_text(const ConfigNode& n) {
  switch (n.kind()) {
    case ConfigNode::Kind::integer: return std::to_string(n.as_int());
    case ConfigNode::Kind::floating: return format_float(n.as_float());
    case ConfigNode::Kind::boolean: return n.as_bool() ? "true" : "false";
    case ConfigNode::Kind::string: return needs_quotes(n.as_string()) ? quote(n.as_string()) : n.as_string();
    case ConfigNode::Kind::list: return "[]";
    case ConfigNode::Kind::map: return "{}";
  }
  return {};
}

inline void emit(const ConfigNode& node, std::size_t indent, std::ostringstream& out) {
  const std::string pad(indent, ' ');
  if (node.is_list()) {
    for (const auto& item : node.items()) {
      if (!item.is_scalar() && item.size())
        throw ConfigError("cannot serialize a non-empty nested collection inside a list");
      out << pad << "- " << scalar_text(item) << '\n';
    }
    return;
  }
  for (const auto& [key, value] : node.entries()) {
    if (value.is_scalar() || value.size() == 0) {
      out << pad << key << ": " << scalar_text(value) << '\n';
    } else {
      out << pad << key << ":\n";
      emit(value, indent + 2, out);
    }
  }
}

}  // namespace config_detail

inline ConfigNode parse_config(std::string_view text) { return config_detail::Parser(text).parse(); }

inline ConfigNode load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path + ": " + std::string(e.what()).substr(std::string(e.what()).find(": ") + 2));
  }
}

/// Inverse of parse_config for every tree it can produce.
inline std::string serialize_config(const ConfigNode& node) {
  if (!node.is_map()) throw ConfigError("top-level config must be a map");
  std::ostringstream out;
  config_detail::emit(node, 0, out);
  return out.str();
}

}  // namespace seqforge
