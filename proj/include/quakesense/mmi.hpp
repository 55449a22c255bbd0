#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace quakesense {

// One level of the Modified Mercalli Intensity scale, I through XII.
// Nothing outside that range is representable.
class MmiLevel {
 public:
  // Throws Error(Value) outside [1, 12].
  static MmiLevel from_value(int value);
  // Exact numeral, any case ("vii" is accepted); nullopt otherwise.
  static std::optional<MmiLevel> from_roman(std::string_view numeral);

  int value() const noexcept { return value_; }
  std::string_view roman() const noexcept;

  friend bool operator==(MmiLevel, MmiLevel) = default;
  friend auto operator<=>(MmiLevel a, MmiLevel b) { return a.value_ <=> b.value_; }

 private:
  explicit MmiLevel(int v) : value_(v) {}
  int value_;
};

inline constexpr std::array<std::string_view, 12> kRomanNumerals = {
    "I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X", "XI", "XII"};

// Descriptor for each level, verbatim from the USGS abbreviated scale.
std::string_view mmi_description(MmiLevel level);

}  // namespace quakesense
