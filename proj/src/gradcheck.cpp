#include "lgdml/gradcheck.hpp"

#include "lgdml/dml_losses.hpp"
#include "lgdml/error.hpp"
#include "lgdml/guidance.hpp"
#include "lgdml/rng.hpp"
#include "lgdml/simcore.hpp"
#include "lgdml/trainer.hpp"

#include <boost/multiprecision/eigen.hpp>
#include <boost/multiprecision/float128.hpp>

#include <algorithm>
#include <functional>
#include <iomanip>
#include <ostream>

namespace lgdml {

namespace {

using Quad = boost::multiprecision::number<boost::multiprecision::float128_backend, boost::multiprecision::et_off>;
using MatQ = Mat<Quad>;

constexpr int kBatch = 6;
constexpr int kClasses = 3;
constexpr int kDim = 8;
constexpr int kLangDim = 5;
constexpr int kPseudoK = 3;

// One random point and everything the losses need around it. Language-side
// inputs are kept in double and cast per evaluation.
struct Instance {
    MatD x;
    Labels labels;
    MatD class_lang_sim;   // batch class-language similarity
    MatD sample_lang_sim;  // batch caption similarity
    MatD lang_rows;        // per-sample class-language rows, kDim wide
    std::vector<MatD> pseudo;        // k per-rank targets
    std::vector<MatD> pseudo_dense;  // k*k pairing targets
    MatD external;                   // batch external target
    std::vector<Triplet> triplets;
};

MatD random_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    MatD m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

MatD random_unit(Rng& rng, Eigen::Index rows, Eigen::Index cols) { return normalize_rows(random_normal(rng, rows, cols)).values; }

MatD gather(const MatD& per_class, const Labels& labels) {
    MatD out(static_cast<Eigen::Index>(labels.size()), per_class.cols());
    for (std::size_t i = 0; i < labels.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = per_class.row(labels[i]);
    return out;
}

Instance make_instance(Rng& rng) {
    Instance in;
    for (int i = 0; i < kBatch; ++i) in.labels.push_back(i % kClasses);
    in.x = random_normal(rng, kBatch, kDim);
    const MatD class_lang = gather(random_unit(rng, kClasses, kLangDim), in.labels);
    in.class_lang_sim = class_lang * class_lang.transpose();
    const MatD captions = random_unit(rng, kBatch, kLangDim);
    in.sample_lang_sim = captions * captions.transpose();
    in.lang_rows = gather(random_unit(rng, kClasses, kDim), in.labels);
    std::vector<MatD> ranks;
    for (int r = 0; r < kPseudoK; ++r) {
        ranks.push_back(gather(random_unit(rng, kClasses, kLangDim), in.labels));
        in.pseudo.push_back(ranks.back() * ranks.back().transpose());
    }
    for (const auto& a : ranks)
        for (const auto& b : ranks) in.pseudo_dense.push_back(a * b.transpose());
    MatD ext = MatD::Identity(kClasses, kClasses);
    for (int a = 0; a < kClasses; ++a)
        for (int b = a + 1; b < kClasses; ++b) ext(a, b) = ext(b, a) = rng.uniform(-1.0, 1.0);
    in.external = gather_class_targets(ext, in.labels);
    const MatD e = normalize_rows(in.x).values;
    Rng triplet_rng(rng.next_u64());
    in.triplets = sample_triplets(e, in.labels, MarginParams{}, triplet_rng);
    return in;
}

template <class T>
std::vector<Mat<T>> cast_all(const std::vector<MatD>& v) {
    std::vector<Mat<T>> out;
    for (const auto& m : v) out.push_back(m.template cast<T>());
    return out;
}

// Loss on the self-similarity of the normalised rows of x, with the gradient
// pulled back to x.
template <class T, class F>
LossGrad<T> through_similarity(const Mat<T>& x, F&& loss_on_s) {
    const Mat<T> e = normalize_rows(x).values;
    const Mat<T> s = e * e.transpose();
    const LossGrad<T> l = loss_on_s(s);
    return {l.value, normalize_rows_backward(x, self_similarity_backward(l.grad, e))};
}

template <class T, class F>
LossGrad<T> through_embedding(const Mat<T>& x, F&& loss_on_e) {
    const LossGrad<T> l = loss_on_e(normalize_rows(x).values);
    return {l.value, normalize_rows_backward(x, l.grad)};
}

// A scalar function of one matrix, in both precisions, plus the largest
// analytic gradient magnitude on fixed entries.
struct Case {
    MatD point;
    std::function<LossGrad<double>(const MatD&)> f64;
    std::function<Quad(const MatQ&)> f128;
    std::function<double(const MatD&)> fixed_grad;
};

template <class F>
Case make_case(MatD point, F f) {
    Case c;
    c.point = std::move(point);
    c.f64 = [f](const MatD& x) { return f(x); };
    c.f128 = [f](const MatQ& x) { return f(x).value; };
    return c;
}

template <class T>
using Scalar = typename std::decay_t<T>::Scalar;

MultisimParams multisim_variant(const std::string& name) {
    const bool reweight = name == "multisim_reweight" || name == "multisim_full";
    MultisimParams p = reweight ? MultisimParams::reweighted() : MultisimParams{};
    if (name == "multisim_mining" || name == "multisim_full") {
        p.nu1 = 0.5;
        p.nu2 = 2.0;
    }
    return p;
}

GuidanceSpec pseudo_spec(const std::string& name) {
    GuidanceSpec spec;
    spec.mode = GuidanceMode::plg;
    spec.k = kPseudoK;
    if (name == "pseudomatch_multi") spec.merge = MergeMode::multi;
    if (name == "pseudomatch_dense") spec.merge = MergeMode::dense;
    if (name == "pseudomatch_sample") spec.level = GuidanceLevel::sample_level;
    return spec;
}

double max_on_mask(const MatD& grad, const Mask& mask) {
    double m = 0.0;
    for (Eigen::Index i = 0; i < grad.size(); ++i)
        if (mask.data()[i]) m = std::max(m, std::abs(grad.data()[i]));
    return m;
}

constexpr double kGamma = 0.5;
constexpr double kTemperature = 1.0;

// Guidance losses that mask same-class entries: the analytic gradient on S.
std::function<double(const MatD&)> masked_fixed_grad(const Instance& in, const std::string& name) {
    return [in, name](const MatD& x) {
        const MatD e = normalize_rows(x).values;
        const MatD s = e * e.transpose();
        const auto masked = masked_image_similarity(s, in.labels, kGamma);
        MatD g;
        if (name == "elg") g = elg_match_loss(masked, in.class_lang_sim, kGamma, kTemperature).grad;
        else if (name == "external") g = external_target_guidance(masked, in.external, kGamma, kTemperature).grad;
        else if (name == "full_kl") g = full_matrix_kl(masked, in.class_lang_sim, kGamma, kTemperature).grad;
        else if (name == "rowwise_l2") g = rowwise_l2_match(masked, in.class_lang_sim, kGamma).grad;
        else {
            const auto spec = pseudo_spec(name);
            g = pseudomatch_loss(s, in.labels, spec.merge == MergeMode::dense ? in.pseudo_dense : in.pseudo, spec).grad;
        }
        return max_on_mask(g, masked.fixed);
    };
}

Case build_case(const std::string& name, const Instance& in, Rng& rng) {
    const auto& y = in.labels;
    if (name == "contrastive_paper" || name == "contrastive_hinge" || name == "contrastive_cosine") {
        ContrastiveParams p;
        if (name == "contrastive_hinge") {
            p.form = ContrastiveForm::hinge;
            p.gamma_p = 0.2;
            p.gamma_n = 1.2;
        }
        if (name == "contrastive_cosine") p.metric = DistanceMetric::cosine_distance;
        return make_case(in.x, [y, p](const auto& x) {
            return through_embedding(x, [&](const auto& e) { return contrastive_loss(e, y, p); });
        });
    }
    if (name.rfind("multisim", 0) == 0) {
        const MultisimParams p = multisim_variant(name);
        const bool with_lang = name != "multisim";
        const MatD lang = in.class_lang_sim;
        return make_case(in.x, [y, p, with_lang, lang](const auto& x) {
            using T = Scalar<decltype(x)>;
            const Mat<T> l = lang.template cast<T>();
            return through_similarity(x, [&](const Mat<T>& s) {
                return multisimilarity_loss(s, y, p, with_lang ? &l : nullptr);
            });
        });
    }
    if (name == "margin") {
        const auto triplets = in.triplets;
        const MarginParams p;
        return make_case(in.x, [triplets, p](const auto& x) {
            using T = Scalar<decltype(x)>;
            return through_embedding(x, [&](const Mat<T>& e) {
                const auto r = margin_loss(e, triplets, p, T(p.beta_margin));
                return LossGrad<T>{r.value, r.grad};
            });
        });
    }
    if (name == "margin_beta") {
        const auto triplets = in.triplets;
        const MatD e = normalize_rows(in.x).values;
        const MarginParams p;
        return make_case(MatD::Constant(1, 1, rng.uniform(0.6, 1.6)), [triplets, p, e](const auto& b) {
            using T = Scalar<decltype(b)>;
            const auto r = margin_loss(Mat<T>(e.template cast<T>()), triplets, p, b(0, 0));
            return LossGrad<T>{r.value, Mat<T>::Constant(1, 1, r.grad_beta)};
        });
    }
    if (name == "elg" || name == "external" || name == "full_kl" || name == "rowwise_l2") {
        const MatD target = name == "external" ? in.external : in.class_lang_sim;
        Case c = make_case(in.x, [y, name, target](const auto& x) {
            using T = Scalar<decltype(x)>;
            const Mat<T> t = target.template cast<T>();
            return through_similarity(x, [&](const Mat<T>& s) {
                const auto masked = masked_image_similarity(s, y, T(kGamma));
                if (name == "elg") return elg_match_loss(masked, t, T(kGamma), T(kTemperature));
                if (name == "external") return external_target_guidance(masked, t, T(kGamma), T(kTemperature));
                if (name == "full_kl") return full_matrix_kl(masked, t, T(kGamma), T(kTemperature));
                return rowwise_l2_match(masked, t, T(kGamma));
            });
        });
        c.fixed_grad = masked_fixed_grad(in, name);
        return c;
    }
    if (name == "elg_sample") {
        const MatD target = in.sample_lang_sim;
        return make_case(in.x, [target](const auto& x) {
            using T = Scalar<decltype(x)>;
            const Mat<T> t = target.template cast<T>();
            return through_similarity(x, [&](const Mat<T>& s) {
                return elg_match_loss(unmasked_image_similarity(s), t, T(kGamma), T(kTemperature));
            });
        });
    }
    if (name.rfind("pseudomatch", 0) == 0) {
        const GuidanceSpec spec = pseudo_spec(name);
        const auto targets = spec.merge == MergeMode::dense ? in.pseudo_dense : in.pseudo;
        Case c = make_case(in.x, [y, spec, targets](const auto& x) {
            using T = Scalar<decltype(x)>;
            const auto t = cast_all<T>(targets);
            return through_similarity(x, [&](const Mat<T>& s) { return pseudomatch_loss(s, y, t, spec); });
        });
        if (spec.level == GuidanceLevel::class_level) c.fixed_grad = masked_fixed_grad(in, name);
        return c;
    }
    if (name == "clip_style") {
        const MatD lang = in.lang_rows;
        return make_case(in.x, [lang](const auto& x) {
            using T = Scalar<decltype(x)>;
            const Mat<T> l = lang.template cast<T>();
            return through_embedding(x, [&](const Mat<T>& e) { return clip_style_loss(e, l, T(0.07)); });
        });
    }
    if (name == "predict_head") {
        // Embeddings feed a small language-prediction MLP, as in training.
        Rng head_rng(rng.next_u64());
        const auto head = EmbedderHead<double>::init(kDim, kLangDim, 7, head_rng);
        const MatD lang = gather(random_unit(rng, kClasses, kLangDim), y);
        return make_case(in.x, [head, lang](const auto& x) {
            using T = Scalar<decltype(x)>;
            std::vector<typename EmbedderHead<T>::Layer> layers;
            for (const auto& l : head.layers()) layers.push_back({l.weight.template cast<T>(), l.bias.template cast<T>()});
            const EmbedderHead<T> h(std::move(layers));
            const Mat<T> target = lang.template cast<T>();
            return through_embedding(x, [&](const Mat<T>& e) {
                typename EmbedderHead<T>::Cache cache;
                const Mat<T> pred = h.forward(e, &cache);
                const LossGrad<T> l = predict_head_loss(pred, target);
                return LossGrad<T>{l.value, h.input_gradient(cache, l.grad)};
            });
        });
    }
    if (name == "embedder_head") {
        // Parameters of a hidden-layer head, flattened into one row, under elg.
        Rng head_rng(rng.next_u64());
        const auto head = EmbedderHead<double>::init(kDim, kLangDim, 7, head_rng);
        std::vector<double> flat;
        for (const auto& l : head.layers()) {
            flat.insert(flat.end(), l.weight.data(), l.weight.data() + l.weight.size());
            flat.insert(flat.end(), l.bias.data(), l.bias.data() + l.bias.size());
        }
        // Jitter the zero-initialised biases.
        for (double& v : flat) v += 0.05 * rng.normal();
        const MatD point = Eigen::Map<const MatD>(flat.data(), 1, static_cast<Eigen::Index>(flat.size()));
        const MatD features = in.x;
        const MatD target = in.class_lang_sim;
        return make_case(point, [head, features, target, y](const auto& theta) {
            using T = Scalar<decltype(theta)>;
            std::vector<typename EmbedderHead<T>::Layer> layers;
            Eigen::Index at = 0;
            for (const auto& l : head.layers()) {
                typename EmbedderHead<T>::Layer p{Mat<T>(l.weight.rows(), l.weight.cols()),
                                                  Eigen::Matrix<T, 1, Eigen::Dynamic>(l.bias.size())};
                for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = theta(0, at++);
                for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias(i) = theta(0, at++);
                layers.push_back(std::move(p));
            }
            const EmbedderHead<T> h(std::move(layers));
            typename EmbedderHead<T>::Cache cache;
            const Mat<T> e = h.forward(features.template cast<T>(), &cache);
            const Mat<T> s = e * e.transpose();
            const auto l = elg_match_loss(masked_image_similarity(s, y, T(kGamma)), Mat<T>(target.template cast<T>()),
                                          T(kGamma), T(kTemperature));
            const auto grads = h.backward(cache, self_similarity_backward(l.grad, e));
            Mat<T> g(1, theta.cols());
            at = 0;
            for (const auto& gl : grads) {
                for (Eigen::Index i = 0; i < gl.weight.size(); ++i) g(0, at++) = gl.weight.data()[i];
                for (Eigen::Index i = 0; i < gl.bias.size(); ++i) g(0, at++) = gl.bias(i);
            }
            return LossGrad<T>{l.value, g};
        });
    }
    fail(ErrorCode::UnknownLoss, name);
}

void check_case(const Case& c, double step, GradcheckRow& row) {
    const MatD analytic = c.f64(c.point).grad;
    const MatQ base = c.point.cast<Quad>();
    const Quad h(step);
    for (Eigen::Index i = 0; i < c.point.size(); ++i) {
        MatQ plus = base;
        MatQ minus = base;
        plus.data()[i] += h;
        minus.data()[i] -= h;
        const double numeric = static_cast<double>((c.f128(plus) - c.f128(minus)) / (Quad(2) * h));
        const double a = analytic.data()[i];
        const double abs_err = std::abs(a - numeric);
        const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
        row.max_rel_error = std::max(row.max_rel_error, rel);
        row.max_abs_error = std::max(row.max_abs_error, abs_err);
    }
    row.coordinates += c.point.size();
    if (c.fixed_grad) {
        row.has_fixed_entries = true;
        row.max_fixed_entry_grad = std::max(row.max_fixed_entry_grad, c.fixed_grad(c.point));
    }
}

}  // namespace

const std::vector<std::string>& gradcheck_losses() {
    static const std::vector<std::string> names{
        "contrastive_paper", "contrastive_hinge",  "contrastive_cosine", "multisim",          "multisim_mining",
        "multisim_reweight", "multisim_full",      "margin",             "margin_beta",       "elg",
        "elg_sample",        "pseudomatch_average", "pseudomatch_multi", "pseudomatch_dense", "pseudomatch_sample",
        "full_kl",           "rowwise_l2",         "clip_style",         "predict_head",      "external",
        "embedder_head"};
    return names;
}

GradcheckReport gradcheck(const std::vector<std::string>& losses, std::uint64_t seed, double step, int instances) {
    if (!(step >= 1e-8 && step <= 1e-4)) fail(ErrorCode::InvalidArgument, "gradcheck step must lie in [1e-8, 1e-4]");
    if (instances < 1) fail(ErrorCode::InvalidArgument, "gradcheck needs at least one instance");
    const auto& known = gradcheck_losses();
    const std::vector<std::string> selected = losses.empty() ? known : losses;
    for (const auto& name : selected) {
        if (std::find(known.begin(), known.end(), name) == known.end()) fail(ErrorCode::UnknownLoss, name);
    }
    GradcheckReport report;
    report.step = step;
    report.seed = seed;
    for (const auto& name : selected) {
        Rng rng = Rng::stream(seed, "gradcheck/" + name);
        GradcheckRow row;
        row.loss = name;
        for (int i = 0; i < instances; ++i) {
            const Instance in = make_instance(rng);
            check_case(build_case(name, in, rng), step, row);
            ++row.instances;
        }
        report.max_rel_error = std::max(report.max_rel_error, row.max_rel_error);
        report.rows.push_back(std::move(row));
    }
    return report;
}

void write_gradcheck_report(std::ostream& os, const GradcheckReport& report) {
    const auto flags = os.flags();
    os << "loss,instances,coordinates,max_rel_error,max_abs_error,max_fixed_entry_grad\n";
    os << std::scientific << std::setprecision(3);
    for (const auto& r : report.rows) {
        os << r.loss << ',' << r.instances << ',' << r.coordinates << ',' << r.max_rel_error << ',' << r.max_abs_error
           << ',';
        if (r.has_fixed_entries) {
            os << r.max_fixed_entry_grad;
        } else {
            os << '-';
        }
        os << '\n';
    }
    os << "# step " << report.step << ", seed " << report.seed << ", max_rel_error " << report.max_rel_error << '\n';
    os.flags(flags);
}

}  // namespace lgdml
