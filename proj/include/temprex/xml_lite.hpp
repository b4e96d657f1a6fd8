#pragma once

// Minimal strict XML subset parser for the flat annotation formats handled
// here: prolog, comments, CDATA, entity escapes, attributes, nested
// elements. Parse errors carry the byte offset of the failure.

#include <cctype>
#include <stdexcept>
#include <string>
#include <vector>

namespace temprex::xml {

struct XmlError : std::runtime_error {
  size_t offset;
  XmlError(const std::string& msg, size_t off)
      : std::runtime_error(msg + " at byte " + std::to_string(off)), offset(off) {}
};

struct XmlNode {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attrs;
  std::string text;  // concatenated character data directly inside this element
  std::vector<XmlNode> children;

  const std::string* attr(const std::string& key) const {
    for (const auto& [k, v] : attrs)
      if (k == key) return &v;
    return nullptr;
  }
  const XmlNode* child(const std::string& nm) const {
    for (const auto& c : children)
      if (c.name == nm) return &c;
    return nullptr;
  }
  std::vector<const XmlNode*> children_named(const std::string& nm) const {
    std::vector<const XmlNode*> out;
    for (const auto& c : children)
      if (c.name == nm) out.push_back(&c);
    return out;
  }
  // Name with any namespace prefix stripped.
  std::string local_name() const {
    auto p = name.rfind(':');
    return p == std::string::npos ? name : name.substr(p + 1);
  }
};

namespace detail {

class Parser {
 public:
  explicit Parser(const std::string& s) : s_(s) {}

  XmlNode parse() {
    skip_misc();
    XmlNode root = parse_element();
    skip_misc();
    if (pos_ != s_.size()) fail("trailing content after root element");
    return root;
  }

 private:
  const std::string& s_;
  size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& msg) const { throw XmlError(msg, pos_); }

  bool starts_with(const char* p) const { return s_.compare(pos_, strlen(p), p) == 0; }
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace((unsigned char)s_[pos_])) ++pos_;
  }

  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<?")) {
        auto end = s_.find("?>", pos_);
        if (end == std::string::npos) fail("unterminated processing instruction");
        pos_ = end + 2;
      } else if (starts_with("<!--")) {
        auto end = s_.find("-->", pos_ + 4);
        if (end == std::string::npos) fail("unterminated comment");
        pos_ = end + 3;
      } else if (starts_with("<!DOCTYPE")) {
        auto end = s_.find('>', pos_);
        if (end == std::string::npos) fail("unterminated DOCTYPE");
        pos_ = end + 1;
      } else {
        return;
      }
    }
  }

  std::string parse_name() {
    size_t start = pos_;
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (std::isalnum((unsigned char)c) || c == '_' || c == '-' || c == ':' || c == '.')
        ++pos_;
      else
        break;
    }
    if (pos_ == start) fail("expected name");
    return s_.substr(start, pos_ - start);
  }

  std::string decode_entities(const std::string& raw, size_t base_off) const {
    std::string out;
    out.reserve(raw.size());
    for (size_t i = 0; i < raw.size();) {
      if (raw[i] != '&') {
        out.push_back(raw[i++]);
        continue;
      }
      auto semi = raw.find(';', i);
      if (semi == std::string::npos) throw XmlError("unterminated entity", base_off + i);
      std::string ent = raw.substr(i + 1, semi - i - 1);
      if (ent == "amp") out.push_back('&');
      else if (ent == "lt") out.push_back('<');
      else if (ent == "gt") out.push_back('>');
      else if (ent == "quot") out.push_back('"');
      else if (ent == "apos") out.push_back('\'');
      else if (!ent.empty() && ent[0] == '#') {
        long code = ent[1] == 'x' || ent[1] == 'X' ? std::stol(ent.substr(2), nullptr, 16)
                                                   : std::stol(ent.substr(1));
        if (code < 0 || code > 0x10FFFF) throw XmlError("bad character reference", base_off + i);
        // Encode as UTF-8.
        unsigned cp = (unsigned)code;
        if (cp < 0x80) out.push_back((char)cp);
        else if (cp < 0x800) {
          out.push_back((char)(0xC0 | (cp >> 6)));
          out.push_back((char)(0x80 | (cp & 0x3F)));
        } else if (cp < 0x10000) {
          out.push_back((char)(0xE0 | (cp >> 12)));
          out.push_back((char)(0x80 | ((cp >> 6) & 0x3F)));
          out.push_back((char)(0x80 | (cp & 0x3F)));
        } else {
          out.push_back((char)(0xF0 | (cp >> 18)));
          out.push_back((char)(0x80 | ((cp >> 12) & 0x3F)));
          out.push_back((char)(0x80 | ((cp >> 6) & 0x3F)));
          out.push_back((char)(0x80 | (cp & 0x3F)));
        }
      } else {
        throw XmlError("unknown entity &" + ent + ";", base_off + i);
      }
      i = semi + 1;
    }
    return out;
  }

  XmlNode parse_element() {
    if (peek() != '<') fail("expected '<'");
    ++pos_;
    XmlNode node;
    node.name = parse_name();
    for (;;) {
      skip_ws();
      char c = peek();
      if (c == '>') { ++pos_; break; }
      if (c == '/') {
        ++pos_;
        if (peek() != '>') fail("expected '>' after '/'");
        ++pos_;
        return node;  // self-closing
      }
      std::string key = parse_name();
      skip_ws();
      if (peek() != '=') fail("expected '=' in attribute");
      ++pos_;
      skip_ws();
      char quote = peek();
      if (quote != '"' && quote != '\'') fail("expected quoted attribute value");
      ++pos_;
      size_t vstart = pos_;
      auto vend = s_.find(quote, pos_);
      if (vend == std::string::npos) fail("unterminated attribute value");
      pos_ = vend + 1;
      node.attrs.emplace_back(key, decode_entities(s_.substr(vstart, vend - vstart), vstart));
    }
    // content
    for (;;) {
      if (pos_ >= s_.size()) fail("unexpected end inside <" + node.name + ">");
      if (starts_with("<![CDATA[")) {
        auto end = s_.find("]]>", pos_ + 9);
        if (end == std::string::npos) fail("unterminated CDATA");
        node.text += s_.substr(pos_ + 9, end - pos_ - 9);
        pos_ = end + 3;
      } else if (starts_with("<!--")) {
        auto end = s_.find("-->", pos_ + 4);
        if (end == std::string::npos) fail("unterminated comment");
        pos_ = end + 3;
      } else if (starts_with("</")) {
        pos_ += 2;
        std::string close = parse_name();
        if (close != node.name)
          fail("mismatched close tag </" + close + "> for <" + node.name + ">");
        skip_ws();
        if (peek() != '>') fail("expected '>' in close tag");
        ++pos_;
        return node;
      } else if (peek() == '<') {
        node.children.push_back(parse_element());
      } else {
        size_t start = pos_;
        auto next = s_.find('<', pos_);
        if (next == std::string::npos) fail("unexpected end in text content");
        node.text += decode_entities(s_.substr(start, next - start), start);
        pos_ = next;
      }
    }
  }
};

}  // namespace detail

inline XmlNode parse(const std::string& content) { return detail::Parser(content).parse(); }

inline std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace temprex::xml
