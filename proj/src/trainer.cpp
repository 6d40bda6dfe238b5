#include "lgdml/trainer.hpp"

#include "lgdml/dml_losses.hpp"
#include "lgdml/error.hpp"
#include "lgdml/evalkit.hpp"
#include "lgdml/guidance.hpp"
#include "lgdml/matrix_io.hpp"
#include "lgdml/pseudolabeler.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace lgdml {

using json = nlohmann::ordered_json;

std::vector<int> sample_batch(const Labels& labels, int batch_size, int samples_per_class, Rng& rng) {
    if (samples_per_class < 1 || batch_size < samples_per_class || batch_size % samples_per_class != 0) {
        fail(ErrorCode::InvalidArgument, "batch_size must be a positive multiple of samples_per_class");
    }
    const std::size_t n_classes = static_cast<std::size_t>(batch_size / samples_per_class);
    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));

    std::vector<const std::vector<int>*> pool;
    for (const auto& [_, members] : by_class)
        if (static_cast<int>(members.size()) >= samples_per_class) pool.push_back(&members);
    if (pool.size() < n_classes) {
        // Fall back to every class, topping small ones up with replacement.
        pool.clear();
        for (const auto& [_, members] : by_class) pool.push_back(&members);
    }
    if (pool.size() < n_classes) {
        fail(ErrorCode::InsufficientClasses, "need " + std::to_string(n_classes) + " classes, have " +
                                                 std::to_string(pool.size()));
    }
    for (std::size_t i = 0; i < n_classes; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);

    std::vector<int> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::vector<int> members = *pool[c];
        if (static_cast<int>(members.size()) >= samples_per_class) {
            for (int i = 0; i < samples_per_class; ++i) {
                const std::size_t j = static_cast<std::size_t>(i) + rng.index(members.size() - static_cast<std::size_t>(i));
                std::swap(members[static_cast<std::size_t>(i)], members[j]);
                batch.push_back(members[static_cast<std::size_t>(i)]);
            }
        } else {
            for (int i = 0; i < samples_per_class; ++i) batch.push_back(members[rng.index(members.size())]);
        }
    }
    return batch;
}

namespace {

MatF gather_rows(const MatD& m, const std::vector<int>& idx) {
    MatF out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]).cast<float>();
    return out;
}

Labels gather_labels(const Labels& y, const std::vector<int>& idx) {
    Labels out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(y[static_cast<std::size_t>(i)]);
    return out;
}

// Row index into a class-level table for every class id, -1 when absent.
std::vector<Eigen::Index> class_rows(const LanguageTable& table, const std::vector<std::string>& class_names) {
    std::vector<Eigen::Index> rows;
    for (const auto& name : class_names) rows.push_back(table.find(name).value_or(-1));
    return rows;
}

template <class Fn>
void for_each_param(EmbedderHead<float>& head, std::vector<EmbedderHead<float>::Layer>& grads, Fn fn) {
    for (std::size_t l = 0; l < head.layers().size(); ++l) {
        auto& layer = head.layers()[l];
        fn(2 * l, std::span<float>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())),
           std::span<const float>(grads[l].weight.data(), static_cast<std::size_t>(grads[l].weight.size())));
        fn(2 * l + 1, std::span<float>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())),
           std::span<const float>(grads[l].bias.data(), static_cast<std::size_t>(grads[l].bias.size())));
    }
}

bool needs_aux_head(GuidanceMode mode) { return mode == GuidanceMode::clip_style || mode == GuidanceMode::predict_head; }

// Everything the guidance term needs that does not change between steps.
class GuidanceTargets {
public:
    GuidanceTargets(const TrainConfig& cfg, const DatasetBundle& data) : cfg_(cfg), data_(data) {
        const auto& spec = cfg.guidance;
        if (data.class_language) {
            tables_.push_back(&*data.class_language);
            if (spec.average_language_models)
                for (const auto& t : data.extra_class_language) tables_.push_back(&t);
            for (const auto* t : tables_) rows_.push_back(class_rows(*t, data.class_names));
        }
        if (spec.mode == GuidanceMode::plg && data.train_posteriors) {
            pseudo_ = spec.level == GuidanceLevel::class_level
                          ? class_pseudolabels(*data.train_posteriors, data.train_labels, spec.k)
                          : sample_pseudolabels(*data.train_posteriors, spec.k);
        }
        if (data.external_targets) external_ = data.external_targets->cast<float>();
    }

    // Per-sample class-language rows of the primary table.
    MatF class_language_rows(const Labels& y) const {
        const auto& t = *tables_.front();
        MatF out(static_cast<Eigen::Index>(y.size()), t.dim());
        for (std::size_t i = 0; i < y.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = row_for(0, y[i]).cast<float>();
        return out;
    }

    MatF class_language_similarity(const Labels& y) const {
        std::vector<MatF> sims;
        for (std::size_t t = 0; t < tables_.size(); ++t) {
            MatF emb(static_cast<Eigen::Index>(y.size()), tables_[t]->dim());
            for (std::size_t i = 0; i < y.size(); ++i) emb.row(static_cast<Eigen::Index>(i)) = row_for(t, y[i]).cast<float>();
            sims.push_back(emb * emb.transpose());
        }
        return average_language_targets(sims);
    }

    MatF sample_language_similarity(const std::vector<int>& train_idx) const {
        std::vector<std::string> keys;
        for (int i : train_idx) keys.push_back(sample_key(static_cast<std::size_t>(i)));
        const MatF emb = data_.sample_language->gather(keys).cast<float>();
        return emb * emb.transpose();
    }

    std::vector<MatF> pseudo_targets(const Labels& y, const std::vector<int>& train_idx) const {
        const auto& keys = cfg_.guidance.level == GuidanceLevel::class_level ? y : train_idx;
        const auto mats = cfg_.guidance.merge == MergeMode::dense
                              ? build_dense_pseudolang_matrices(*pseudo_, *data_.pseudo_language, keys)
                              : build_pseudolang_matrices(*pseudo_, *data_.pseudo_language, keys);
        std::vector<MatF> out;
        for (const auto& m : mats) out.push_back(m.cast<float>());
        return out;
    }

    MatF external_similarity(const Labels& y) const { return gather_class_targets(external_, y); }

private:
    Eigen::RowVectorXd row_for(std::size_t table, int label) const {
        const Eigen::Index r = rows_[table][static_cast<std::size_t>(label)];
        if (r < 0) fail(ErrorCode::GuidanceInputMissing, "no language embedding for class " + data_.class_names[static_cast<std::size_t>(label)]);
        return tables_[table]->embeddings().row(r);
    }

    const TrainConfig& cfg_;
    const DatasetBundle& data_;
    std::vector<const LanguageTable*> tables_;
    std::vector<std::vector<Eigen::Index>> rows_;
    std::optional<PseudolabelAssignment> pseudo_;
    MatF external_;
};

// Recall@1 of the validation samples as queries against every other training
// sample; ties go to the lower index.
double validation_recall(const EmbedderHead<float>& head, const MatD& features, const Labels& labels,
                         const std::vector<int>& queries) {
    const MatD emb = embed(head, features);
    long hits = 0;
    for (int q : queries) {
        const Eigen::VectorXd sim = emb * emb.row(q).transpose();
        int best = -1;
        for (int j = 0; j < static_cast<int>(emb.rows()); ++j) {
            if (j != q && (best < 0 || sim(j) > sim(best))) best = j;
        }
        if (best >= 0 && labels[static_cast<std::size_t>(best)] == labels[static_cast<std::size_t>(q)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(queries.size());
}

}  // namespace

void check_guidance_inputs(const TrainConfig& cfg, const DatasetBundle& data) {
    const auto& g = cfg.guidance;
    auto missing = [](const std::string& what) { fail(ErrorCode::GuidanceInputMissing, what); };
    const bool guided = g.mode != GuidanceMode::none && g.omega > 0.0;
    auto need_class_language = [&] {
        if (!data.class_language) missing("guidance mode " + std::string(to_string(g.mode)) + " needs a class language table");
        for (int y : data.train_labels) {
            if (!data.class_language->find(data.class_names[static_cast<std::size_t>(y)])) {
                missing("class language table lacks " + data.class_names[static_cast<std::size_t>(y)]);
            }
        }
    };
    if (cfg.base_loss == BaseLoss::multisimilarity && cfg.multisim_language) need_class_language();
    if (!guided) return;
    switch (g.mode) {
        case GuidanceMode::none: break;
        case GuidanceMode::elg:
            if (g.level == GuidanceLevel::sample_level) {
                if (!data.sample_language) missing("sample-level elg needs per-sample captions");
                for (std::size_t i = 0; i < data.train_labels.size(); ++i) {
                    if (!data.sample_language->find(sample_key(i))) missing("no caption for " + sample_key(i));
                }
            } else {
                need_class_language();
            }
            break;
        case GuidanceMode::rowwise_l2:
        case GuidanceMode::full_kl:
        case GuidanceMode::clip_style:
        case GuidanceMode::predict_head: need_class_language(); break;
        case GuidanceMode::plg:
            if (!data.train_posteriors) missing("plg needs train posteriors");
            if (!data.pseudo_language) missing("plg needs a pseudolabel language table");
            break;
        case GuidanceMode::external:
            if (!data.external_targets) missing("external guidance needs an external target matrix");
            break;
    }
}

MatD embed(const EmbedderHead<float>& head, const MatD& features) {
    return head.forward(features.cast<float>()).cast<double>();
}

TrainResult train(const TrainConfig& cfg, const DatasetBundle& data) {
    validate(cfg);
    validate(data);
    check_guidance_inputs(cfg, data);
    if (data.train_labels.empty()) fail(ErrorCode::InvalidArgument, "no training samples");

    const auto& g = cfg.guidance;
    const bool guided = g.mode != GuidanceMode::none && g.omega > 0.0;

    // Validation split over training samples.
    std::vector<int> fit_idx, val_idx;
    {
        std::vector<int> order(data.train_labels.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng split = Rng::stream(cfg.seed, "split");
        split.shuffle(order);
        const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(order.size())));
        val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
        fit_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
        std::sort(val_idx.begin(), val_idx.end());
        std::sort(fit_idx.begin(), fit_idx.end());
    }
    const Labels fit_labels = gather_labels(data.train_labels, fit_idx);
    const bool has_val = !val_idx.empty();

    Rng init_rng = Rng::stream(cfg.seed, "init");
    Rng sampler = Rng::stream(cfg.seed, "sampler");
    Rng margin_rng = Rng::stream(cfg.seed, "margin");
    Rng aux_rng = Rng::stream(cfg.seed, "aux_init");

    const int feat_dim = static_cast<int>(data.train_features.cols());
    EmbedderHead<float> head = EmbedderHead<float>::init(feat_dim, cfg.embed_dim, cfg.hidden_layer ? 2 * feat_dim : 0, init_rng);
    EmbedderHead<float> aux;
    if (guided && needs_aux_head(g.mode)) {
        const int lang_dim = static_cast<int>(data.class_language->dim());
        aux = EmbedderHead<float>::init(cfg.embed_dim, lang_dim, g.mode == GuidanceMode::predict_head ? cfg.aux_hidden : 0,
                                        aux_rng);
    }
    const GuidanceTargets targets(cfg, data);

    std::vector<AdamState> head_state(2 * head.layers().size());
    std::vector<AdamState> aux_state(2 * aux.layers().size());
    double margin_beta = cfg.margin.beta_margin;
    double lr = cfg.lr;

    TrainResult result;
    result.initial = Checkpoint{cfg, head, margin_beta, 0};
    result.best = result.initial;
    double best_val = -std::numeric_limits<double>::infinity();
    int epochs_without_gain = 0;
    int decays = 0;

    const int steps_per_epoch = std::max<int>(1, static_cast<int>(fit_idx.size()) / cfg.batch_size);
    const float gamma = static_cast<float>(g.gamma_lang);
    const float temperature = static_cast<float>(g.temperature);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double sum_total = 0.0, sum_dml = 0.0, sum_match = 0.0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            const auto local = sample_batch(fit_labels, cfg.batch_size, cfg.samples_per_class, sampler);
            std::vector<int> batch;
            batch.reserve(local.size());
            for (int i : local) batch.push_back(fit_idx[static_cast<std::size_t>(i)]);
            const MatF x = gather_rows(data.train_features, batch);
            const Labels y = gather_labels(data.train_labels, batch);

            EmbedderHead<float>::Cache cache;
            MatF emb;
            try {
                emb = head.forward(x, &cache);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::ZeroRow) throw;
                std::ostringstream msg;
                msg << "epoch " << epoch << " step " << step << ": embedding not finite (" << e.what() << ")";
                fail(ErrorCode::NonFiniteLoss, msg.str());
            }
            const MatF sim = emb * emb.transpose();

            // Base metric-learning term, as a gradient on the embeddings.
            LossGrad<float> dml{0.0f, MatF::Zero(emb.rows(), emb.cols())};
            double beta_grad = 0.0;
            switch (cfg.base_loss) {
                case BaseLoss::multisimilarity: {
                    MatF lang_sim;
                    if (cfg.multisim_language) lang_sim = targets.class_language_similarity(y);
                    const auto ms = multisimilarity_loss<float>(sim, y, cfg.multisim, cfg.multisim_language ? &lang_sim : nullptr);
                    dml = {ms.value, self_similarity_backward(ms.grad, emb)};
                    break;
                }
                case BaseLoss::contrastive: dml = contrastive_loss<float>(emb, y, cfg.contrastive); break;
                case BaseLoss::margin: {
                    const auto triplets = sample_triplets(emb, y, cfg.margin, margin_rng);
                    const auto m = margin_loss<float>(emb, triplets, cfg.margin, static_cast<float>(margin_beta));
                    dml = {m.value, m.grad};
                    beta_grad = m.grad_beta;
                    break;
                }
            }

            // Language guidance term, also as a gradient on the embeddings.
            LossGrad<float> match{0.0f, MatF::Zero(emb.rows(), emb.cols())};
            std::vector<EmbedderHead<float>::Layer> aux_grads;
            if (guided) {
                auto from_sim = [&](const LossGrad<float>& lg) {
                    match = {lg.value, self_similarity_backward(lg.grad, emb)};
                };
                switch (g.mode) {
                    case GuidanceMode::none: break;
                    case GuidanceMode::elg:
                        if (g.level == GuidanceLevel::sample_level) {
                            from_sim(elg_match_loss(unmasked_image_similarity(sim), targets.sample_language_similarity(batch),
                                                    gamma, temperature));
                        } else {
                            from_sim(elg_match_loss(masked_image_similarity(sim, y, gamma), targets.class_language_similarity(y),
                                                    gamma, temperature));
                        }
                        break;
                    case GuidanceMode::plg:
                        from_sim(pseudomatch_loss(sim, y, targets.pseudo_targets(y, batch), g));
                        break;
                    case GuidanceMode::external:
                        from_sim(external_target_guidance(masked_image_similarity(sim, y, gamma), targets.external_similarity(y),
                                                          gamma, temperature));
                        break;
                    case GuidanceMode::rowwise_l2:
                        from_sim(rowwise_l2_match(masked_image_similarity(sim, y, gamma), targets.class_language_similarity(y), gamma));
                        break;
                    case GuidanceMode::full_kl:
                        from_sim(full_matrix_kl(masked_image_similarity(sim, y, gamma), targets.class_language_similarity(y), gamma,
                                                temperature));
                        break;
                    case GuidanceMode::clip_style:
                    case GuidanceMode::predict_head: {
                        EmbedderHead<float>::Cache aux_cache;
                        const MatF pred = aux.forward(emb, &aux_cache);
                        const MatF lang_rows = targets.class_language_rows(y);
                        const LossGrad<float> lg = g.mode == GuidanceMode::clip_style
                                                       ? clip_style_loss(pred, lang_rows, static_cast<float>(g.clip_temperature))
                                                       : predict_head_loss(pred, lang_rows);
                        match = {lg.value, aux.input_gradient(aux_cache, lg.grad)};
                        aux_grads = aux.backward(aux_cache, (static_cast<float>(g.omega) * lg.grad).eval());
                        break;
                    }
                }
            }

            const LossGrad<float> total = compose_objective(dml, match, g.omega);
            if (!std::isfinite(total.value) || !total.grad.allFinite()) {
                std::ostringstream msg;
                msg << "epoch " << epoch << " step " << step << ": total=" << total.value << " dml=" << dml.value
                    << " match=" << match.value;
                fail(ErrorCode::NonFiniteLoss, msg.str());
            }
            sum_total += total.value;
            sum_dml += dml.value;
            sum_match += match.value;

            auto head_grads = head.backward(cache, total.grad);
            const AdamHyper hyper{lr, cfg.weight_decay};
            for_each_param(head, head_grads, [&](std::size_t slot, std::span<float> p, std::span<const float> gr) {
                adam_step(p, gr, head_state[slot], hyper);
            });
            if (!aux_grads.empty()) {
                for_each_param(aux, aux_grads, [&](std::size_t slot, std::span<float> p, std::span<const float> gr) {
                    adam_step(p, gr, aux_state[slot], hyper);
                });
            }
            if (cfg.base_loss == BaseLoss::margin && cfg.margin.learn_beta) {
                margin_beta = std::max(1e-6, margin_beta - cfg.margin.beta_lr * beta_grad);
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.total_loss = sum_total / steps_per_epoch;
        rec.dml_loss = sum_dml / steps_per_epoch;
        rec.match_loss = sum_match / steps_per_epoch;
        rec.lr = lr;
        rec.val_recall_at_1 = has_val ? validation_recall(head, data.train_features, data.train_labels, val_idx)
                                      : std::numeric_limits<double>::quiet_NaN();
        result.history.epochs.push_back(rec);

        if (has_val) {
            if (rec.val_recall_at_1 > best_val) {
                best_val = rec.val_recall_at_1;
                result.best = Checkpoint{cfg, head, margin_beta, epoch};
                epochs_without_gain = 0;
            } else if (++epochs_without_gain >= cfg.schedule.patience && decays < cfg.schedule.max_steps_down) {
                lr *= cfg.schedule.decay_factor;
                ++decays;
                epochs_without_gain = 0;
            }
        } else {
            result.best = Checkpoint{cfg, head, margin_beta, epoch};
        }
    }
    result.last = Checkpoint{cfg, head, margin_beta, cfg.epochs};
    return result;
}

void write_history_csv(std::ostream& os, const TrainHistory& history) {
    const auto old_precision = os.precision(17);
    os << "epoch,total_loss,dml_loss,match_loss,val_recall_at_1,lr\n";
    for (const auto& e : history.epochs) {
        os << e.epoch << ',' << e.total_loss << ',' << e.dml_loss << ',' << e.match_loss << ',';
        if (std::isnan(e.val_recall_at_1)) {
            os << "nan";
        } else {
            os << e.val_recall_at_1;
        }
        os << ',' << e.lr << '\n';
    }
    os.precision(old_precision);
}

namespace {

constexpr std::array<char, 4> kCheckpointMagic{'L', 'G', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

template <class U>
void put_le(std::ostream& os, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(std::istream& is) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        const int c = is.get();
        if (c == std::char_traits<char>::eof()) fail(ErrorCode::TruncatedPayload, "checkpoint header");
        v |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
    json meta;
    meta["config"] = config_to_json(ckpt.config);
    meta["activation"] = "tanh";
    json layers = json::array();
    for (const auto& l : ckpt.head.layers()) layers.push_back({{"in", l.weight.cols()}, {"out", l.weight.rows()}});
    meta["layers"] = layers;
    meta["margin_beta"] = ckpt.margin_beta;
    meta["epoch"] = ckpt.epoch;
    const std::string text = meta.dump(2);

    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    put_le<std::uint16_t>(os, kCheckpointVersion);
    put_le<std::uint16_t>(os, 0);
    put_le<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(2 * ckpt.head.layers().size()));
    for (const auto& l : ckpt.head.layers()) {
        write_matrix(os, l.weight.cast<double>().eval(), Dtype::f32);
        write_matrix(os, MatD(l.bias.cast<double>()), Dtype::f32);
    }
    if (!os) fail(ErrorCode::Io, "checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& is) {
    std::array<char, 4> magic{};
    is.read(magic.data(), magic.size());
    if (is.gcount() != 4) fail(ErrorCode::TruncatedPayload, "checkpoint magic");
    if (magic != kCheckpointMagic) fail(ErrorCode::BadMagic, "not a checkpoint");
    if (get_le<std::uint16_t>(is) != kCheckpointVersion) fail(ErrorCode::BadMagic, "unsupported checkpoint version");
    get_le<std::uint16_t>(is);
    const auto len = get_le<std::uint64_t>(is);
    std::string text(static_cast<std::size_t>(len), '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(is.gcount()) != len) fail(ErrorCode::TruncatedPayload, "checkpoint metadata");
    const json meta = json::parse(text);
    Checkpoint ckpt;
    ckpt.config = config_from_json(meta.at("config"));
    ckpt.margin_beta = meta.at("margin_beta").get<double>();
    ckpt.epoch = meta.at("epoch").get<int>();
    const auto count = get_le<std::uint32_t>(is);
    if (count != 2 * meta.at("layers").size()) fail(ErrorCode::CountMismatch, "checkpoint matrix count");
    std::vector<EmbedderHead<float>::Layer> layers;
    for (std::uint32_t i = 0; i < count; i += 2) {
        EmbedderHead<float>::Layer l;
        l.weight = read_matrix(is).values.cast<float>();
        const MatD bias = read_matrix(is).values;
        if (bias.rows() != 1 || bias.cols() != l.weight.rows()) fail(ErrorCode::CountMismatch, "checkpoint bias shape");
        l.bias = bias.row(0).cast<float>();
        layers.push_back(std::move(l));
    }
    ckpt.head = EmbedderHead<float>(std::move(layers));
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    atomic_write(path, [&](std::ostream& os) { write_checkpoint(os, ckpt); }, true);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::Io, "cannot read " + path.string());
    return read_checkpoint(is);
}

}  // namespace lgdml
