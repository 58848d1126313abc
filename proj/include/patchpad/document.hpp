#pragma once

#include <string>
#include <string_view>

namespace patchpad {

// Patch-level class; the index doubles as the class id of the margin head.
enum class Label { real = 0, print = 1, screen = 2, composite = 3 };
inline constexpr int kNumClasses = 4;

enum class AttackType { none, print, screen, composite, hq_print, gray_print, synthetic };
enum class Device { iphone15, mi9tpro, redmi9c, other };
enum class Illumination { no_light_flash, dim_flash, dim_noflash, bright_flash, bright_noflash };
enum class AnonLevel { non, pseudo, full };

std::string_view to_string(Label v);
std::string_view to_string(AttackType v);
std::string_view to_string(Device v);
std::string_view to_string(Illumination v);
std::string_view to_string(AnonLevel v);

// Parsers throw patchpad::Error(invalid_argument) on unknown names.
Label parse_label(std::string_view s);
AttackType parse_attack_type(std::string_view s);
Device parse_device(std::string_view s);
Illumination parse_illumination(std::string_view s);
AnonLevel parse_anon_level(std::string_view s);

/// Column heading used in result tables ("Screen", "HQ-Print", ...).
std::string_view display_name(AttackType v);

struct DocumentMeta {
    std::string subject_id;
    Label label = Label::real;
    Device device = Device::other;
    Illumination illumination = Illumination::bright_noflash;
    double height_cm = 10.0;  // one of 10, 12.5, 15
    AnonLevel anon_level = AnonLevel::non;
    int template_version = 1;

    /// Throws on out-of-domain height or template version.
    void validate() const;
};

}  // namespace patchpad
