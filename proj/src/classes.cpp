#include "tpseg/classes.hpp"

#include "tpseg/errors.hpp"

namespace tpseg {

const std::array<LesionClass, kNumClasses>& all_classes() {
    static const std::array<LesionClass, kNumClasses> classes = {
        LesionClass::MA, LesionClass::HE, LesionClass::EX, LesionClass::SE};
    return classes;
}

const std::string& class_name(LesionClass cls) {
    static const std::array<std::string, kNumClasses> names = {"MA", "HE", "EX", "SE"};
    return names[static_cast<std::size_t>(cls)];
}

LesionClass parse_class(const std::string& name) {
    for (LesionClass cls : all_classes())
        if (class_name(cls) == name) return cls;
    throw ValidationError("unknown class '" + name + "', valid classes: MA, HE, EX, SE");
}

DescriptionRegistry::DescriptionRegistry() {
    descriptions_ = {
        {LesionClass::MA, "tiny dark red dots"},
        {LesionClass::HE, "dark red blotches"},
        {LesionClass::EX, "yellowish-white deposits"},
        {LesionClass::SE, "pale yellow soft patches"},
    };
}

DescriptionRegistry DescriptionRegistry::from_config(const Config& cfg) {
    DescriptionRegistry reg;
    for (LesionClass cls : all_classes()) {
        std::string key = "class." + class_name(cls) + ".description";
        if (cfg.has(key)) reg.set(cls, cfg.require_string(key));
    }
    return reg;
}

const std::string& DescriptionRegistry::description(LesionClass cls) const {
    return descriptions_.at(cls);
}

void DescriptionRegistry::set(LesionClass cls, const std::string& description) {
    if (description.empty())
        throw ValidationError("empty description for class " + class_name(cls));
    descriptions_[cls] = description;
}

ClassPrompt DescriptionRegistry::prompt(LesionClass cls) const {
    return ClassPrompt{cls, description(cls)};
}

} // namespace tpseg
