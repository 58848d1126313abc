#include "patchpad/document.hpp"

#include "patchpad/error.hpp"

#include <array>
#include <utility>

namespace patchpad {

namespace {

template <class E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<E, std::string_view>, N>& table,
             std::string_view what) {
    for (const auto& [value, name] : table) {
        if (name == s) return value;
    }
    throw invalid_argument("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

template <class E, std::size_t N>
std::string_view name_of(E v, const std::array<std::pair<E, std::string_view>, N>& table) {
    for (const auto& [value, name] : table) {
        if (value == v) return name;
    }
    return "?";
}

constexpr std::array<std::pair<Label, std::string_view>, 4> kLabels{{
    {Label::real, "real"}, {Label::print, "print"}, {Label::screen, "screen"}, {Label::composite, "composite"}}};

constexpr std::array<std::pair<AttackType, std::string_view>, 7> kAttacks{{{AttackType::none, "none"},
                                                                           {AttackType::print, "print"},
                                                                           {AttackType::screen, "screen"},
                                                                           {AttackType::composite, "composite"},
                                                                           {AttackType::hq_print, "hq_print"},
                                                                           {AttackType::gray_print, "gray_print"},
                                                                           {AttackType::synthetic, "synthetic"}}};

constexpr std::array<std::pair<AttackType, std::string_view>, 7> kAttackColumns{{{AttackType::none, "Bona fide"},
                                                                                {AttackType::print, "Print"},
                                                                                {AttackType::screen, "Screen"},
                                                                                {AttackType::composite, "Composite"},
                                                                                {AttackType::hq_print, "HQ-Print"},
                                                                                {AttackType::gray_print, "Gray-Print"},
                                                                                {AttackType::synthetic, "Synthetic"}}};

constexpr std::array<std::pair<Device, std::string_view>, 4> kDevices{
    {{Device::iphone15, "iphone15"}, {Device::mi9tpro, "mi9tpro"}, {Device::redmi9c, "redmi9c"}, {Device::other, "other"}}};

constexpr std::array<std::pair<Illumination, std::string_view>, 5> kIllum{{{Illumination::no_light_flash, "no_light_flash"},
                                                                          {Illumination::dim_flash, "dim_flash"},
                                                                          {Illumination::dim_noflash, "dim_noflash"},
                                                                          {Illumination::bright_flash, "bright_flash"},
                                                                          {Illumination::bright_noflash, "bright_noflash"}}};

constexpr std::array<std::pair<AnonLevel, std::string_view>, 3> kAnon{
    {{AnonLevel::non, "non"}, {AnonLevel::pseudo, "pseudo"}, {AnonLevel::full, "full"}}};

}  // namespace

std::string_view to_string(Label v) { return name_of(v, kLabels); }
std::string_view to_string(AttackType v) { return name_of(v, kAttacks); }
std::string_view to_string(Device v) { return name_of(v, kDevices); }
std::string_view to_string(Illumination v) { return name_of(v, kIllum); }
std::string_view to_string(AnonLevel v) { return name_of(v, kAnon); }
std::string_view display_name(AttackType v) { return name_of(v, kAttackColumns); }

Label parse_label(std::string_view s) { return parse_enum(s, kLabels, "label"); }
AttackType parse_attack_type(std::string_view s) { return parse_enum(s, kAttacks, "attack type"); }
Device parse_device(std::string_view s) { return parse_enum(s, kDevices, "device"); }
Illumination parse_illumination(std::string_view s) { return parse_enum(s, kIllum, "illumination"); }
AnonLevel parse_anon_level(std::string_view s) { return parse_enum(s, kAnon, "anonymization level"); }

void DocumentMeta::validate() const {
    if (height_cm != 10.0 && height_cm != 12.5 && height_cm != 15.0) {
        throw invalid_argument("height_cm must be one of 10, 12.5, 15");
    }
    if (template_version < 1) throw invalid_argument("template_version must be >= 1");
}

}  // namespace patchpad
