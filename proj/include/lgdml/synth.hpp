#pragma once

#include "lgdml/dataset.hpp"

#include <cstdint>

namespace lgdml {

struct SynthSpec {
    int n_super = 4;
    int classes_per_super = 5;
    int samples_per_class = 30;
    int feat_dim = 64;
    int lang_dim = 32;
    double intra_noise = 1.0;
    std::uint64_t seed = 0;

    int latent_dim = 16;
    double super_spread = 1.0;
    double class_spread = 0.6;
    double class_nuisance = 0.0;  // per-class feature offset absent from the language side
    double lang_noise = 0.25;
    double latent_noise_share = 0.8;  // fraction of intra-class variance inside the latent space
    int n_pretrain = 60;
    double classifier_temperature = 0.15;
    int n_lang_models = 3;
};

void validate(const SynthSpec& spec);

struct SynthResult {
    DatasetBundle bundle;
    // Fraction of (class, same-superclass partner, other-superclass partner)
    // triples where the language similarity ranks the same-superclass partner higher.
    double language_hierarchy_agreement = 0.0;
    std::vector<int> superclass;  // per class id
};

/// Two-level hierarchy fixture. Each class has a latent code around its superclass
/// centre; features and language embeddings are independent noisy linear images of
/// that code. The last class of every superclass is held out as a test class.
SynthResult synth_dataset(const SynthSpec& spec);

}  // namespace lgdml
