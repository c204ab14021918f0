#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "geca/errors.hpp"

namespace geca {

/// Multi-label conditioning: a bit per attribute, or the null label used for
/// the unconditional branch of classifier-free guidance.
class Label {
 public:
  Label() = default;

  static Label null() { return Label(); }

  static Label from_bits(std::vector<std::uint8_t> bits) {
    for (auto b : bits)
      if (b > 1) throw InputError("label bits must be 0 or 1");
    Label l;
    l.bits_ = std::move(bits);
    l.null_ = false;
    return l;
  }

  /// One-hot label for a single class id.
  static Label class_id(long id, long num_labels) {
    if (id < 0 || id >= num_labels) throw InputError("unknown label id " + std::to_string(id));
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(num_labels), 0);
    bits[static_cast<std::size_t>(id)] = 1;
    return from_bits(std::move(bits));
  }

  /// Parses "null", a bit string such as "10100", or "1;0;1;0;0".
  static Label parse(std::string_view text) {
    if (text == "null" || text == "NULL" || text == "none") return null();
    std::vector<std::uint8_t> bits;
    for (char c : text) {
      if (c == ';') continue;
      if (c != '0' && c != '1') throw InputError("invalid label string '" + std::string(text) + "'");
      bits.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    if (bits.empty()) throw InputError("empty label string");
    return from_bits(std::move(bits));
  }

  bool is_null() const { return null_; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::size_t size() const { return bits_.size(); }

  std::string to_string() const {
    if (null_) return "null";
    std::string s;
    for (auto b : bits_) s.push_back(static_cast<char>('0' + b));
    return s;
  }

  friend bool operator==(const Label&, const Label&) = default;

 private:
  std::vector<std::uint8_t> bits_;
  bool null_ = true;
};

}  // namespace geca
