#include "lgdml/synth.hpp"

#include "lgdml/error.hpp"
#include "lgdml/rng.hpp"

#include <cmath>
#include <cstdio>

namespace lgdml {

namespace {

MatD gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
    MatD m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

// Values are produced in double and rounded once to single precision.
MatD to_single(const MatD& m) { return m.cast<float>().cast<double>(); }

std::string class_label(int super, int member) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "group %d kind %d", super, member);
    return buf;
}

MatD softmax_rows(const MatD& logits) {
    MatD out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        out.row(i) = (logits.row(i).array() - mx).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

}  // namespace

void validate(const SynthSpec& s) {
    if (s.n_super < 1 || s.samples_per_class < 1 || s.feat_dim < 1 || s.lang_dim < 1 || s.latent_dim < 1 ||
        s.n_pretrain < 1 || s.n_lang_models < 1) {
        fail(ErrorCode::DegenerateSpec, "all counts must be >= 1");
    }
    if (s.classes_per_super < 2) fail(ErrorCode::DegenerateSpec, "classes_per_super must be >= 2 to hold out a test class");
    if (!(s.intra_noise > 0.0)) fail(ErrorCode::DegenerateSpec, "intra_noise must be > 0");
    if (!(s.latent_noise_share >= 0.0 && s.latent_noise_share <= 1.0)) {
        fail(ErrorCode::DegenerateSpec, "latent_noise_share must lie in [0, 1]");
    }
    if (s.super_spread < 0.0 || s.class_spread < 0.0 || s.class_nuisance < 0.0 || s.lang_noise < 0.0 || !(s.classifier_temperature > 0.0)) {
        fail(ErrorCode::DegenerateSpec, "spreads must be non-negative and the classifier temperature positive");
    }
}

SynthResult synth_dataset(const SynthSpec& s) {
    validate(s);
    const int n_classes = s.n_super * s.classes_per_super;
    const double latent_scale = 1.0 / std::sqrt(static_cast<double>(s.latent_dim));

    Rng hier = Rng::stream(s.seed, "synth/hierarchy");
    const MatD supers = gaussian(hier, s.n_super, s.latent_dim, s.super_spread * latent_scale);
    MatD codes(n_classes, s.latent_dim);
    SynthResult result;
    result.superclass.resize(static_cast<std::size_t>(n_classes));
    for (int g = 0; g < s.n_super; ++g) {
        for (int j = 0; j < s.classes_per_super; ++j) {
            const int c = g * s.classes_per_super + j;
            result.superclass[static_cast<std::size_t>(c)] = g;
            codes.row(c) = supers.row(g) + gaussian(hier, 1, s.latent_dim, s.class_spread * latent_scale);
        }
    }

    Rng feat_rng = Rng::stream(s.seed, "synth/features");
    // Entries N(0, 1/feat_dim) keep |A u| close to |u|.
    const MatD feature_map = gaussian(feat_rng, s.feat_dim, s.latent_dim, 1.0 / std::sqrt(static_cast<double>(s.feat_dim)));
    // Within-class variation is split between the latent space and isotropic feature noise.
    const double latent_noise = s.intra_noise * std::sqrt(s.latent_noise_share) * latent_scale;
    const double feature_noise = s.intra_noise * std::sqrt(1.0 - s.latent_noise_share) /
                                 std::sqrt(static_cast<double>(s.feat_dim));

    // Class-specific feature offsets that the language side does not see.
    const MatD nuisance = gaussian(feat_rng, n_classes, s.feat_dim, s.class_nuisance / std::sqrt(static_cast<double>(s.feat_dim)));

    DatasetBundle& b = result.bundle;
    for (int c = 0; c < n_classes; ++c) {
        const int g = c / s.classes_per_super;
        b.class_names.push_back(class_label(g, c % s.classes_per_super));
    }
    std::vector<Eigen::RowVectorXd> train_x, test_x;
    for (int c = 0; c < n_classes; ++c) {
        const bool held_out = (c % s.classes_per_super) == s.classes_per_super - 1;
        for (int i = 0; i < s.samples_per_class; ++i) {
            const MatD u = codes.row(c) + gaussian(feat_rng, 1, s.latent_dim, latent_noise);
            Eigen::RowVectorXd x = (u * feature_map.transpose()) + nuisance.row(c) +
                                   gaussian(feat_rng, 1, s.feat_dim, feature_noise);
            (held_out ? test_x : train_x).push_back(std::move(x));
            (held_out ? b.test_labels : b.train_labels).push_back(c);
        }
    }
    auto stack = [&](const std::vector<Eigen::RowVectorXd>& rows) {
        MatD m(static_cast<Eigen::Index>(rows.size()), s.feat_dim);
        for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i];
        return to_single(m);
    };
    b.train_features = stack(train_x);
    b.test_features = stack(test_x);

    // Language models: independent linear images of the latent codes.
    std::vector<MatD> lang_maps;
    Rng lang_rng = Rng::stream(s.seed, "synth/language");
    const double lang_map_scale = 1.0 / std::sqrt(static_cast<double>(s.lang_dim));
    const double lang_noise_scale = s.lang_noise / std::sqrt(static_cast<double>(s.lang_dim));
    for (int m = 0; m < s.n_lang_models; ++m) {
        lang_maps.push_back(gaussian(lang_rng, s.lang_dim, s.latent_dim, lang_map_scale));
        const MatD emb = (codes * lang_maps.back().transpose()) + gaussian(lang_rng, n_classes, s.lang_dim, lang_noise_scale);
        LanguageTable table(b.class_names, to_single(emb), "A photo of a {}");
        if (m == 0) {
            b.class_language = std::move(table);
        } else {
            b.extra_class_language.push_back(std::move(table));
        }
    }

    // Per-sample captions: class code plus sample-level noise through the first model.
    {
        Rng cap_rng = Rng::stream(s.seed, "synth/captions");
        std::vector<std::string> keys;
        MatD emb(static_cast<Eigen::Index>(b.train_labels.size()), s.lang_dim);
        for (std::size_t i = 0; i < b.train_labels.size(); ++i) {
            keys.push_back(sample_key(i));
            const Eigen::RowVectorXd base = codes.row(b.train_labels[i]) * lang_maps.front().transpose();
            emb.row(static_cast<Eigen::Index>(i)) = base + gaussian(cap_rng, 1, s.lang_dim, 2.0 * lang_noise_scale);
        }
        b.sample_language = LanguageTable(std::move(keys), to_single(emb));
    }

    // Pretrain classifier: pretrain classes are further random members of the same
    // superclasses, and the frozen linear head scores features against their
    // feature-space images.
    {
        Rng pre_rng = Rng::stream(s.seed, "synth/pretrain");
        MatD pre_codes(s.n_pretrain, s.latent_dim);
        for (int j = 0; j < s.n_pretrain; ++j) {
            pre_codes.row(j) = supers.row(j % s.n_super) + gaussian(pre_rng, 1, s.latent_dim, s.class_spread * latent_scale);
        }
        std::vector<std::string> pre_names;
        for (int j = 0; j < s.n_pretrain; ++j) {
            char buf[48];
            std::snprintf(buf, sizeof(buf), "pretrain object %02d", j);
            pre_names.emplace_back(buf);
        }
        const MatD weights = pre_codes * feature_map.transpose();  // n_pretrain x feat_dim
        const MatD logits = (b.train_features * weights.transpose()) / s.classifier_temperature;
        b.train_posteriors = PosteriorMatrix{to_single(softmax_rows(logits)), pre_names};
        const MatD pre_lang = pre_codes * lang_maps.front().transpose() +
                              gaussian(pre_rng, s.n_pretrain, s.lang_dim, lang_noise_scale);
        b.pseudo_language = LanguageTable(pre_names, to_single(pre_lang));
    }

    // Hierarchy similarity in the style of a taxonomy distance, mapped to [-1, 1].
    {
        MatD unit(n_classes, n_classes);
        for (int a = 0; a < n_classes; ++a) {
            for (int c = 0; c < n_classes; ++c) {
                const bool same_super = result.superclass[static_cast<std::size_t>(a)] == result.superclass[static_cast<std::size_t>(c)];
                unit(a, c) = a == c ? 1.0 : (same_super ? 0.6 : 0.2);
            }
        }
        b.external_targets = (2.0 * unit).array() - 1.0;
    }

    // Agreement between language similarity and the hierarchy.
    const MatD& lang = b.class_language->embeddings();
    const MatD sim = lang * lang.transpose();
    long agree = 0;
    long total = 0;
    for (int c = 0; c < n_classes; ++c) {
        for (int a = 0; a < n_classes; ++a) {
            if (a == c || result.superclass[static_cast<std::size_t>(a)] != result.superclass[static_cast<std::size_t>(c)]) continue;
            for (int o = 0; o < n_classes; ++o) {
                if (result.superclass[static_cast<std::size_t>(o)] == result.superclass[static_cast<std::size_t>(c)]) continue;
                ++total;
                if (sim(c, a) > sim(c, o)) ++agree;
            }
        }
    }
    result.language_hierarchy_agreement = total > 0 ? static_cast<double>(agree) / static_cast<double>(total) : 1.0;
    validate(b);
    return result;
}

}  // namespace lgdml
