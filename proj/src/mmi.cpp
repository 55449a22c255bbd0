#include "quakesense/mmi.hpp"

#include <cctype>

#include <fmt/format.h>

#include "quakesense/error.hpp"
#include "quakesense/io.hpp"

namespace quakesense {

namespace {

constexpr std::array<std::string_view, 12> kDescriptions = {
    "Not felt except by a very few under especially favorable conditions.",
    "Felt only by a few persons at rest, especially on upper floors of buildings. Delicately "
    "suspended objects may swing.",
    "Felt quite noticeably by persons indoors, especially on upper floors of buildings. Many "
    "people do not recognize it as an earthquake. Standing motor cars may rock slightly. "
    "Vibration similar to the passing of a truck. Duration estimated.",
    "Felt indoors by many, outdoors by few during the day. At night, some awakened. Dishes, "
    "windows, doors disturbed; walls make cracking sound. Sensation like heavy truck striking "
    "building. Standing motor cars rocked noticeably.",
    "Felt by nearly everyone; many awakened. Some dishes, windows broken. Unstable objects "
    "overturned. Pendulum clocks may stop.",
    "Felt by all, many frightened. Some heavy furniture moved; a few instances of fallen "
    "plaster. Damage slight.",
    "Damage negligible in buildings of good design and construction; slight to moderate in "
    "well-built ordinary structures; considerable damage in poorly built or badly designed "
    "structures; some chimneys broken.",
    "Damage slight in specially designed structures; considerable damage in ordinary "
    "substantial buildings with partial collapse. Damage great in poorly built structures. "
    "Fall of chimneys, factory stacks, columns, monuments, walls. Heavy furniture overturned.",
    "Damage considerable in specially designed structures; well-designed frame structures "
    "thrown out of plumb. Damage great in substantial buildings, with partial collapse. "
    "Buildings shifted off foundations.",
    "Some well-built wooden structures destroyed; most masonry and frame structures destroyed "
    "with foundations. Rail bent.",
    "Few, if any (masonry) structures remain standing. Bridges destroyed. Rails bent greatly.",
    "Damage total. Lines of sight and level are distorted. Objects thrown into the air.",
};

}  // namespace

MmiLevel MmiLevel::from_value(int value) {
  if (value < 1 || value > 12) {
    throw Error(ErrorKind::Value, fmt::format("MMI value {} outside I-XII", value));
  }
  return MmiLevel(value);
}

std::optional<MmiLevel> MmiLevel::from_roman(std::string_view numeral) {
  std::string upper = to_lower(trim(numeral));
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (std::size_t i = 0; i < kRomanNumerals.size(); ++i) {
    if (kRomanNumerals[i] == upper) return MmiLevel(static_cast<int>(i) + 1);
  }
  return std::nullopt;
}

std::string_view MmiLevel::roman() const noexcept {
  return kRomanNumerals[static_cast<std::size_t>(value_ - 1)];
}

std::string_view mmi_description(MmiLevel level) {
  return kDescriptions[static_cast<std::size_t>(level.value() - 1)];
}

}  // namespace quakesense
