#include "lgdml/guidance.hpp"

namespace lgdml {

void validate(const GuidanceSpec& s) {
    if (!(s.omega >= 0.0)) fail(ErrorCode::InvalidArgument, "omega must be >= 0");
    if (!(s.temperature > 0.0) || !(s.clip_temperature > 0.0)) {
        fail(ErrorCode::NonPositiveTemperature, "guidance temperatures must be > 0");
    }
    if (s.mode == GuidanceMode::plg && s.k < 1) fail(ErrorCode::InvalidArgument, "k must be >= 1 for plg");
}

std::string_view to_string(GuidanceMode mode) {
    switch (mode) {
        case GuidanceMode::none: return "none";
        case GuidanceMode::elg: return "elg";
        case GuidanceMode::plg: return "plg";
        case GuidanceMode::external: return "external";
        case GuidanceMode::clip_style: return "clip_style";
        case GuidanceMode::predict_head: return "predict_head";
        case GuidanceMode::rowwise_l2: return "rowwise_l2";
        case GuidanceMode::full_kl: return "full_kl";
    }
    return "none";
}

std::string_view to_string(MergeMode mode) {
    switch (mode) {
        case MergeMode::average: return "average";
        case MergeMode::multi: return "multi";
        case MergeMode::dense: return "dense";
    }
    return "average";
}

std::string_view to_string(GuidanceLevel level) {
    return level == GuidanceLevel::class_level ? "class" : "sample";
}

GuidanceMode parse_guidance_mode(std::string_view s) {
    for (auto m : {GuidanceMode::none, GuidanceMode::elg, GuidanceMode::plg, GuidanceMode::external,
                   GuidanceMode::clip_style, GuidanceMode::predict_head, GuidanceMode::rowwise_l2, GuidanceMode::full_kl}) {
        if (s == to_string(m)) return m;
    }
    fail(ErrorCode::InvalidArgument, "unknown guidance mode " + std::string(s));
}

MergeMode parse_merge_mode(std::string_view s) {
    for (auto m : {MergeMode::average, MergeMode::multi, MergeMode::dense}) {
        if (s == to_string(m)) return m;
    }
    fail(ErrorCode::InvalidArgument, "unknown merge mode " + std::string(s));
}

GuidanceLevel parse_guidance_level(std::string_view s) {
    if (s == "class") return GuidanceLevel::class_level;
    if (s == "sample") return GuidanceLevel::sample_level;
    fail(ErrorCode::InvalidArgument, "unknown guidance level " + std::string(s));
}

}  // namespace lgdml
