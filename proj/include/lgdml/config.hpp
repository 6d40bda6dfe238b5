#pragma once

#include "lgdml/dml_losses.hpp"
#include "lgdml/guidance.hpp"
#include "lgdml/synth.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace lgdml {

enum class BaseLoss { multisimilarity, contrastive, margin };

std::string_view to_string(BaseLoss loss);
BaseLoss parse_base_loss(std::string_view s);

struct Schedule {
    int max_steps_down = 2;
    double decay_factor = 0.3;
    int patience = 5;
};

struct TrainConfig {
    BaseLoss base_loss = BaseLoss::multisimilarity;
    GuidanceSpec guidance;
    double lr = 1e-5;
    double weight_decay = 3e-4;
    int batch_size = 32;
    int samples_per_class = 2;
    int epochs = 50;
    std::uint64_t seed = 0;
    double val_fraction = 0.15;
    Schedule schedule;

    int embed_dim = 32;
    bool hidden_layer = false;
    int aux_hidden = 64;  // width of the language-prediction MLP

    ContrastiveParams contrastive;
    MultisimParams multisim;
    bool multisim_language = false;  // feed class-language similarity into mining/reweighting
    MarginParams margin;

    std::string data;
    std::string output;
};

void validate(const TrainConfig& cfg);

// Unknown keys and wrong types raise BadConfig.
TrainConfig config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json config_to_json(const TrainConfig& cfg);
TrainConfig parse_config(std::string_view text);
std::string serialize_config(const TrainConfig& cfg);
TrainConfig load_config(const std::filesystem::path& path);

SynthSpec synth_spec_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json synth_spec_to_json(const SynthSpec& spec);

}  // namespace lgdml
