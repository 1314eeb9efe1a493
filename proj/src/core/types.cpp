#include "mass/core/types.hpp"

#include "mass/core/error.hpp"

#include <algorithm>
#include <cctype>
#include <string>

namespace mass {

namespace {

std::string upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
    return out;
}

} // namespace

std::string_view to_string(Modality m) {
    switch (m) {
    case Modality::CT: return "CT";
    case Modality::MR: return "MR";
    case Modality::PET: return "PET";
    case Modality::SYNTH: return "SYNTH";
    }
    return "?";
}

std::string_view to_string(MaskSource s) {
    switch (s) {
    case MaskSource::BUILTIN: return "BUILTIN";
    case MaskSource::EXTERNAL: return "EXTERNAL";
    case MaskSource::GT: return "GT";
    case MaskSource::PHANTOM: return "PHANTOM";
    }
    return "?";
}

Modality parse_modality(std::string_view name) {
    auto const u = upper(name);
    if (u == "CT") return Modality::CT;
    if (u == "MR" || u == "MRI") return Modality::MR;
    if (u == "PET") return Modality::PET;
    if (u == "SYNTH") return Modality::SYNTH;
    throw InvalidParameter("unknown modality '" + std::string(name) + "' (supported: CT, MR, PET, SYNTH)");
}

MaskSource parse_mask_source(std::string_view name) {
    auto const u = upper(name);
    if (u == "BUILTIN") return MaskSource::BUILTIN;
    if (u == "EXTERNAL") return MaskSource::EXTERNAL;
    if (u == "GT") return MaskSource::GT;
    if (u == "PHANTOM") return MaskSource::PHANTOM;
    throw InvalidParameter("unknown mask source '" + std::string(name) + "'");
}

std::string format_shape(Shape3 const& s) {
    return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + ")";
}

} // namespace mass
