#include "lgdml/config.hpp"

#include "lgdml/error.hpp"

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

namespace lgdml {

using json = nlohmann::ordered_json;

namespace {

// Walks one JSON object, rejecting keys nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) fail(ErrorCode::BadConfig, where_ + " must be an object");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::BadConfig, where_ + "." + key + ": " + e.what());
        }
    }

    template <class E, class Parse>
    void read_enum(const char* key, E& out, Parse parse) {
        std::string s;
        const auto it = j_.find(key);
        seen_.insert(key);
        if (it == j_.end()) return;
        if (!it->is_string()) fail(ErrorCode::BadConfig, where_ + "." + key + " must be a string");
        s = it->template get<std::string>();
        try {
            out = parse(s);
        } catch (const Error& e) {
            fail(ErrorCode::BadConfig, where_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.count(key)) fail(ErrorCode::BadConfig, "unknown key " + where_ + "." + key);
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

DistanceMetric parse_metric(std::string_view s) {
    if (s == "euclidean") return DistanceMetric::euclidean;
    if (s == "cosine_distance") return DistanceMetric::cosine_distance;
    fail(ErrorCode::InvalidArgument, "unknown metric " + std::string(s));
}

std::string_view to_string(DistanceMetric m) { return m == DistanceMetric::euclidean ? "euclidean" : "cosine_distance"; }

ContrastiveForm parse_form(std::string_view s) {
    if (s == "paper") return ContrastiveForm::paper;
    if (s == "hinge") return ContrastiveForm::hinge;
    fail(ErrorCode::InvalidArgument, "unknown contrastive form " + std::string(s));
}

std::string_view to_string(ContrastiveForm f) { return f == ContrastiveForm::paper ? "paper" : "hinge"; }

TripletSampler parse_sampler(std::string_view s) {
    if (s == "distance_weighted") return TripletSampler::distance_weighted;
    if (s == "random") return TripletSampler::random;
    fail(ErrorCode::InvalidArgument, "unknown sampler " + std::string(s));
}

std::string_view to_string(TripletSampler s) { return s == TripletSampler::random ? "random" : "distance_weighted"; }

}  // namespace

std::string_view to_string(BaseLoss loss) {
    switch (loss) {
        case BaseLoss::multisimilarity: return "multisimilarity";
        case BaseLoss::contrastive: return "contrastive";
        case BaseLoss::margin: return "margin";
    }
    return "multisimilarity";
}

BaseLoss parse_base_loss(std::string_view s) {
    if (s == "multisimilarity") return BaseLoss::multisimilarity;
    if (s == "contrastive") return BaseLoss::contrastive;
    if (s == "margin") return BaseLoss::margin;
    fail(ErrorCode::InvalidArgument, "unknown base loss " + std::string(s));
}

void validate(const TrainConfig& c) {
    auto bad = [](const std::string& m) { fail(ErrorCode::BadConfig, m); };
    if (c.batch_size < 2 || c.samples_per_class < 1) bad("batch_size must be >= 2 and samples_per_class >= 1");
    if (c.batch_size % c.samples_per_class != 0) bad("batch_size must be divisible by samples_per_class");
    if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0)) bad("val_fraction must be in [0, 1)");
    if (c.epochs < 0) bad("epochs must be >= 0");
    if (!(c.lr >= 0.0) || !(c.weight_decay >= 0.0)) bad("lr and weight_decay must be >= 0");
    if (c.embed_dim < 1 || c.aux_hidden < 1) bad("embed_dim and aux_hidden must be >= 1");
    if (c.schedule.max_steps_down < 0 || c.schedule.patience < 1 || !(c.schedule.decay_factor > 0.0) ||
        c.schedule.decay_factor > 1.0) {
        bad("schedule needs max_steps_down >= 0, patience >= 1, decay_factor in (0, 1]");
    }
    try {
        validate(c.guidance);
        validate(c.contrastive);
        validate(c.multisim);
        validate(c.margin);
    } catch (const Error& e) {
        bad(e.what());
    }
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    ObjectReader r(j, "config");
    r.read_enum("base_loss", c.base_loss, parse_base_loss);
    if (const json* g = r.child("guidance")) {
        ObjectReader gr(*g, "guidance");
        auto& s = c.guidance;
        gr.read_enum("mode", s.mode, parse_guidance_mode);
        gr.read("omega", s.omega);
        gr.read("gamma_lang", s.gamma_lang);
        gr.read("k", s.k);
        gr.read_enum("merge", s.merge, parse_merge_mode);
        gr.read_enum("level", s.level, parse_guidance_level);
        gr.read("temperature", s.temperature);
        gr.read("clip_temperature", s.clip_temperature);
        gr.read("average_language_models", s.average_language_models);
        gr.finish();
    }
    r.read("lr", c.lr);
    r.read("weight_decay", c.weight_decay);
    r.read("batch_size", c.batch_size);
    r.read("samples_per_class", c.samples_per_class);
    r.read("epochs", c.epochs);
    r.read("seed", c.seed);
    r.read("val_fraction", c.val_fraction);
    if (const json* s = r.child("schedule")) {
        ObjectReader sr(*s, "schedule");
        sr.read("max_steps_down", c.schedule.max_steps_down);
        sr.read("decay_factor", c.schedule.decay_factor);
        sr.read("patience", c.schedule.patience);
        sr.finish();
    }
    r.read("embed_dim", c.embed_dim);
    r.read("hidden_layer", c.hidden_layer);
    r.read("aux_hidden", c.aux_hidden);
    if (const json* s = r.child("contrastive")) {
        ObjectReader sr(*s, "contrastive");
        sr.read("gamma_p", c.contrastive.gamma_p);
        sr.read("gamma_n", c.contrastive.gamma_n);
        sr.read_enum("form", c.contrastive.form, parse_form);
        sr.read_enum("metric", c.contrastive.metric, parse_metric);
        sr.finish();
    }
    if (const json* s = r.child("multisim")) {
        ObjectReader sr(*s, "multisim");
        auto& m = c.multisim;
        sr.read("alpha", m.alpha);
        sr.read("beta", m.beta);
        sr.read("lambda", m.lambda);
        sr.read("epsilon", m.epsilon);
        sr.read("nu1", m.nu1);
        sr.read("nu2", m.nu2);
        sr.read("nu3", m.nu3);
        sr.read("nu4", m.nu4);
        sr.finish();
    }
    r.read("multisim_language", c.multisim_language);
    if (const json* s = r.child("margin")) {
        ObjectReader sr(*s, "margin");
        sr.read("beta_margin", c.margin.beta_margin);
        sr.read("alpha_margin", c.margin.alpha_margin);
        sr.read_enum("sampler", c.margin.sampler, parse_sampler);
        sr.read("learn_beta", c.margin.learn_beta);
        sr.read("beta_lr", c.margin.beta_lr);
        sr.finish();
    }
    r.read("data", c.data);
    r.read("output", c.output);
    r.finish();
    validate(c);
    return c;
}

json config_to_json(const TrainConfig& c) {
    json j;
    j["base_loss"] = to_string(c.base_loss);
    const auto& s = c.guidance;
    j["guidance"] = {{"mode", to_string(s.mode)},
                     {"omega", s.omega},
                     {"gamma_lang", s.gamma_lang},
                     {"k", s.k},
                     {"merge", to_string(s.merge)},
                     {"level", to_string(s.level)},
                     {"temperature", s.temperature},
                     {"clip_temperature", s.clip_temperature},
                     {"average_language_models", s.average_language_models}};
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["batch_size"] = c.batch_size;
    j["samples_per_class"] = c.samples_per_class;
    j["epochs"] = c.epochs;
    j["seed"] = c.seed;
    j["val_fraction"] = c.val_fraction;
    j["schedule"] = {{"max_steps_down", c.schedule.max_steps_down},
                     {"decay_factor", c.schedule.decay_factor},
                     {"patience", c.schedule.patience}};
    j["embed_dim"] = c.embed_dim;
    j["hidden_layer"] = c.hidden_layer;
    j["aux_hidden"] = c.aux_hidden;
    j["contrastive"] = {{"gamma_p", c.contrastive.gamma_p},
                        {"gamma_n", c.contrastive.gamma_n},
                        {"form", to_string(c.contrastive.form)},
                        {"metric", to_string(c.contrastive.metric)}};
    const auto& m = c.multisim;
    j["multisim"] = {{"alpha", m.alpha}, {"beta", m.beta}, {"lambda", m.lambda}, {"epsilon", m.epsilon},
                     {"nu1", m.nu1},     {"nu2", m.nu2},   {"nu3", m.nu3},       {"nu4", m.nu4}};
    j["multisim_language"] = c.multisim_language;
    j["margin"] = {{"beta_margin", c.margin.beta_margin},
                   {"alpha_margin", c.margin.alpha_margin},
                   {"sampler", to_string(c.margin.sampler)},
                   {"learn_beta", c.margin.learn_beta},
                   {"beta_lr", c.margin.beta_lr}};
    j["data"] = c.data;
    j["output"] = c.output;
    return j;
}

TrainConfig parse_config(std::string_view text) {
    json j;
    try {
        j = json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::BadConfig, e.what());
    }
    return config_from_json(j);
}

std::string serialize_config(const TrainConfig& cfg) { return config_to_json(cfg).dump(2); }

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::Io, "cannot read " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

SynthSpec synth_spec_from_json(const json& j) {
    SynthSpec s;
    ObjectReader r(j, "synth");
    r.read("n_super", s.n_super);
    r.read("classes_per_super", s.classes_per_super);
    r.read("samples_per_class", s.samples_per_class);
    r.read("feat_dim", s.feat_dim);
    r.read("lang_dim", s.lang_dim);
    r.read("intra_noise", s.intra_noise);
    r.read("seed", s.seed);
    r.read("latent_dim", s.latent_dim);
    r.read("super_spread", s.super_spread);
    r.read("class_spread", s.class_spread);
    r.read("class_nuisance", s.class_nuisance);
    r.read("lang_noise", s.lang_noise);
    r.read("latent_noise_share", s.latent_noise_share);
    r.read("n_pretrain", s.n_pretrain);
    r.read("classifier_temperature", s.classifier_temperature);
    r.read("n_lang_models", s.n_lang_models);
    r.finish();
    validate(s);
    return s;
}

json synth_spec_to_json(const SynthSpec& s) {
    return {{"n_super", s.n_super},
            {"classes_per_super", s.classes_per_super},
            {"samples_per_class", s.samples_per_class},
            {"feat_dim", s.feat_dim},
            {"lang_dim", s.lang_dim},
            {"intra_noise", s.intra_noise},
            {"seed", s.seed},
            {"latent_dim", s.latent_dim},
            {"super_spread", s.super_spread},
            {"class_spread", s.class_spread},
            {"class_nuisance", s.class_nuisance},
            {"lang_noise", s.lang_noise},
            {"latent_noise_share", s.latent_noise_share},
            {"n_pretrain", s.n_pretrain},
            {"classifier_temperature", s.classifier_temperature},
            {"n_lang_models", s.n_lang_models}};
}

}  // namespace lgdml
