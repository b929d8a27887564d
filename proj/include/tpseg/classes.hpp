#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "tpseg/config.hpp"

namespace tpseg {

// The four lesion classes. Enum order is the canonical registry order
// used for parameter naming, dataset folders, and metric reports.
enum class LesionClass { MA = 0, HE = 1, EX = 2, SE = 3 };

inline constexpr int kNumClasses = 4;

const std::array<LesionClass, kNumClasses>& all_classes();
const std::string& class_name(LesionClass cls);
LesionClass parse_class(const std::string& name); // ValidationError lists valid names

// Text class-prompt: a lesion class plus the explicit description that
// drives prior generation.
struct ClassPrompt {
    LesionClass cls;
    std::string description;
};

// Per-class description registry. Defaults describe each lesion's visual
// signature; any entry can be overridden via `class.<NAME>.description`
// config keys or a registry file in the same flat format.
class DescriptionRegistry {
public:
    DescriptionRegistry(); // defaults

    static DescriptionRegistry from_config(const Config& cfg);

    const std::string& description(LesionClass cls) const;
    void set(LesionClass cls, const std::string& description); // non-empty

    ClassPrompt prompt(LesionClass cls) const;

private:
    std::map<LesionClass, std::string> descriptions_;
};

} // namespace tpseg
