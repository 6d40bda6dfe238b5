#include "lgdml/evalkit.hpp"

#include "lgdml/error.hpp"
#include "lgdml/guidance.hpp"
#include "lgdml/rng.hpp"
#include "lgdml/simcore.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

namespace lgdml {

namespace {

void require_labels(const MatD& emb, const Labels& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != emb.rows()) {
        fail(ErrorCode::ShapeMismatch, "label count does not match embedding rows");
    }
}

double entropy(const std::map<int, long>& counts, double n) {
    double h = 0.0;
    for (const auto& [_, c] : counts) {
        const double p = static_cast<double>(c) / n;
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

std::vector<int> name_lookup(const Labels& labels, const std::vector<std::string>& class_names,
                             const LanguageTable& lang) {
    std::vector<int> rows(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= class_names.size()) {
            fail(ErrorCode::MissingClassName, "label " + std::to_string(y) + " has no class name");
        }
        rows[i] = static_cast<int>(lang.index_of(class_names[static_cast<std::size_t>(y)]));
    }
    return rows;
}

}  // namespace

std::vector<std::vector<int>> ranked_neighbors(const MatD& emb, std::size_t limit) {
    const MatD sim = emb * emb.transpose();
    const auto n = static_cast<int>(emb.rows());
    std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
    for (int q = 0; q < n; ++q) {
        std::vector<int> order;
        order.reserve(static_cast<std::size_t>(n - 1));
        for (int j = 0; j < n; ++j)
            if (j != q) order.push_back(j);
        const std::size_t keep = std::min(limit, order.size());
        auto cmp = [&](int a, int b) {
            if (sim(q, a) != sim(q, b)) return sim(q, a) > sim(q, b);
            return a < b;
        };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), cmp);
        order.resize(keep);
        out[static_cast<std::size_t>(q)] = std::move(order);
    }
    return out;
}

std::map<int, double> recall_at_k(const MatD& emb, const Labels& labels, const std::vector<int>& ks) {
    require_labels(emb, labels);
    if (emb.rows() < 2) fail(ErrorCode::KExceedsGallery, "need at least two samples");
    int kmax = 0;
    for (int k : ks) {
        if (k < 1 || k > emb.rows() - 1) {
            fail(ErrorCode::KExceedsGallery, "k=" + std::to_string(k) + " with gallery " + std::to_string(emb.rows() - 1));
        }
        kmax = std::max(kmax, k);
    }
    const auto nn = ranked_neighbors(emb, static_cast<std::size_t>(kmax));
    std::map<int, double> out;
    for (int k : ks) {
        long hits = 0;
        for (std::size_t q = 0; q < nn.size(); ++q) {
            for (int r = 0; r < k; ++r) {
                if (labels[static_cast<std::size_t>(nn[q][static_cast<std::size_t>(r)])] == labels[q]) {
                    ++hits;
                    break;
                }
            }
        }
        out[k] = static_cast<double>(hits) / static_cast<double>(nn.size());
    }
    return out;
}

double normalized_mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) fail(ErrorCode::ShapeMismatch, "partition sizes differ");
    if (a.empty()) fail(ErrorCode::DegenerateInput, "empty partitions");
    const double n = static_cast<double>(a.size());
    std::map<int, long> ca, cb;
    std::map<std::pair<int, int>, long> joint;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++ca[a[i]];
        ++cb[b[i]];
        ++joint[{a[i], b[i]}];
    }
    const double ha = entropy(ca, n);
    const double hb = entropy(cb, n);
    if (ha == 0.0 && hb == 0.0) return 1.0;
    double mi = 0.0;
    for (const auto& [key, c] : joint) {
        const double pij = static_cast<double>(c) / n;
        const double pi = static_cast<double>(ca[key.first]) / n;
        const double pj = static_cast<double>(cb[key.second]) / n;
        mi += pij * std::log(pij / (pi * pj));
    }
    return std::clamp(2.0 * mi / (ha + hb), 0.0, 1.0);
}

KMeansResult kmeans(const MatD& points, int k, std::uint64_t seed, int restarts, int max_iter) {
    const auto n = static_cast<int>(points.rows());
    if (k < 1 || k > n) fail(ErrorCode::InvalidArgument, "kmeans: k out of range");
    Rng rng = Rng::stream(seed, "kmeans");
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int run = 0; run < restarts; ++run) {
        // k-means++ seeding
        MatD centers(k, points.cols());
        centers.row(0) = points.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
        Eigen::VectorXd d2(n);
        for (int i = 0; i < n; ++i) d2(i) = (points.row(i) - centers.row(0)).squaredNorm();
        for (int c = 1; c < k; ++c) {
            const double total = d2.sum();
            int pick = 0;
            if (total > 0.0) {
                const double u = rng.uniform() * total;
                double acc = 0.0;
                pick = n - 1;
                for (int i = 0; i < n; ++i) {
                    acc += d2(i);
                    if (u < acc) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
            }
            centers.row(c) = points.row(pick);
            for (int i = 0; i < n; ++i) d2(i) = std::min(d2(i), (points.row(i) - centers.row(c)).squaredNorm());
        }
        std::vector<int> assign(static_cast<std::size_t>(n), -1);
        double inertia = 0.0;
        for (int iter = 0; iter < max_iter; ++iter) {
            bool changed = false;
            inertia = 0.0;
            for (int i = 0; i < n; ++i) {
                int arg = 0;
                double bestd = std::numeric_limits<double>::infinity();
                for (int c = 0; c < k; ++c) {
                    const double d = (points.row(i) - centers.row(c)).squaredNorm();
                    if (d < bestd) {
                        bestd = d;
                        arg = c;
                    }
                }
                inertia += bestd;
                if (assign[static_cast<std::size_t>(i)] != arg) {
                    assign[static_cast<std::size_t>(i)] = arg;
                    changed = true;
                }
            }
            if (!changed) break;
            MatD sums = MatD::Zero(k, points.cols());
            std::vector<int> counts(static_cast<std::size_t>(k), 0);
            for (int i = 0; i < n; ++i) {
                sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
                ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
            }
            for (int c = 0; c < k; ++c) {
                // Empty clusters keep their previous center.
                if (counts[static_cast<std::size_t>(c)] > 0) centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
            }
        }
        if (inertia < best.inertia) {
            best.inertia = inertia;
            best.assignment = assign;
        }
    }
    return best;
}

double nmi(const MatD& emb, const Labels& labels, std::uint64_t seed) {
    require_labels(emb, labels);
    const std::set<int> classes(labels.begin(), labels.end());
    if (emb.rows() < static_cast<Eigen::Index>(classes.size()) || classes.empty()) {
        fail(ErrorCode::DegenerateInput, "fewer samples than classes");
    }
    bool all_same = true;
    for (Eigen::Index i = 1; i < emb.rows() && all_same; ++i) all_same = emb.row(i) == emb.row(0);
    if (all_same) fail(ErrorCode::DegenerateInput, "all points identical");
    const auto clusters = kmeans(emb, static_cast<int>(classes.size()), seed);
    return normalized_mutual_information(clusters.assignment, labels);
}

double map_at_1000(const MatD& emb, const Labels& labels) {
    require_labels(emb, labels);
    if (emb.rows() < 2) fail(ErrorCode::KExceedsGallery, "need at least two samples");
    const std::size_t depth = std::min<std::size_t>(1000, static_cast<std::size_t>(emb.rows() - 1));
    const auto nn = ranked_neighbors(emb, depth);
    std::map<int, long> class_counts;
    for (int y : labels) ++class_counts[y];
    double total = 0.0;
    for (std::size_t q = 0; q < nn.size(); ++q) {
        const long relevant = class_counts[labels[q]] - 1;
        if (relevant <= 0) continue;
        double ap = 0.0;
        long hits = 0;
        for (std::size_t r = 0; r < nn[q].size(); ++r) {
            if (labels[static_cast<std::size_t>(nn[q][r])] == labels[q]) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(r + 1);
            }
        }
        total += ap / static_cast<double>(std::min<long>(1000, relevant));
    }
    return total / static_cast<double>(nn.size());
}

EvalReport evaluate(const MatD& emb, const Labels& labels, const std::vector<int>& ks, std::uint64_t seed) {
    EvalReport report;
    report.recall_at = recall_at_k(emb, labels, ks);
    report.nmi = nmi(emb, labels, seed);
    report.map_at_1000 = map_at_1000(emb, labels);
    return report;
}

RetrievalProfile semantic_retrieval_profile(const MatD& emb, const Labels& labels,
                                            const std::vector<std::string>& class_names, const LanguageTable& lang,
                                            int top_n, int top_classes) {
    require_labels(emb, labels);
    const auto lang_rows = name_lookup(labels, class_names, lang);
    const auto nn = ranked_neighbors(emb, static_cast<std::size_t>(top_n));
    std::map<int, std::map<int, long>> counts;
    std::map<int, long> n_queries;
    for (std::size_t q = 0; q < nn.size(); ++q) {
        ++n_queries[labels[q]];
        auto& row = counts[labels[q]];
        for (int j : nn[q]) ++row[labels[static_cast<std::size_t>(j)]];
    }
    RetrievalProfile profile;
    for (const auto& [query, retrieved] : counts) {
        const auto qname = class_names[static_cast<std::size_t>(query)];
        const auto qvec = lang.lookup(qname);
        ClassProfile cp{query, qname, n_queries[query], 0, {}};
        for (const auto& [cls, c] : retrieved) {
            const auto& cname = class_names[static_cast<std::size_t>(cls)];
            cp.total_retrieved += c;
            cp.top.push_back({cls, cname, c, qvec.dot(lang.lookup(cname))});
        }
        std::stable_sort(cp.top.begin(), cp.top.end(), [](const RetrievedClass& a, const RetrievedClass& b) {
            if (a.language_similarity != b.language_similarity) return a.language_similarity > b.language_similarity;
            return a.label < b.label;
        });
        if (static_cast<int>(cp.top.size()) > top_classes) cp.top.resize(static_cast<std::size_t>(top_classes));
        profile.classes.push_back(std::move(cp));
    }
    return profile;
}

double alignment_divergence(const MatD& emb, const Labels& labels, const std::vector<std::string>& class_names,
                            const LanguageTable& lang, double gamma_lang, double temperature) {
    require_labels(emb, labels);
    const auto rows = name_lookup(labels, class_names, lang);
    MatD lang_emb(static_cast<Eigen::Index>(rows.size()), lang.dim());
    for (std::size_t i = 0; i < rows.size(); ++i) lang_emb.row(static_cast<Eigen::Index>(i)) = lang.embeddings().row(rows[i]);
    const MatD s_img = emb * emb.transpose();
    const MatD s_lang = lang_emb * lang_emb.transpose();
    const auto masked = masked_image_similarity(s_img, labels, gamma_lang);
    const auto p = row_softmax(masked.sim.values, 0.0, temperature);
    const auto q = row_softmax(s_lang, gamma_lang, temperature);
    return rowwise_kl(p, q);
}

void write_eval_report(std::ostream& os, const EvalReport& report) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json recall = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.recall_at) recall[std::to_string(k)] = v;
    j["recall_at"] = recall;
    j["nmi"] = report.nmi;
    j["map_at_1000"] = report.map_at_1000;
    os << j.dump(2) << '\n';
}

void write_retrieval_profile_csv(std::ostream& os, const RetrievalProfile& profile) {
    const auto old_precision = os.precision(10);
    os << "query_class,query_name,n_queries,rank,retrieved_class,retrieved_name,count,language_similarity\n";
    for (const auto& cp : profile.classes) {
        for (std::size_t r = 0; r < cp.top.size(); ++r) {
            const auto& rc = cp.top[r];
            os << cp.query_label << ',' << '"' << cp.query_name << '"' << ',' << cp.n_queries << ',' << (r + 1) << ','
               << rc.label << ',' << '"' << rc.name << '"' << ',' << rc.count << ',' << rc.language_similarity << '\n';
        }
    }
    os.precision(old_precision);
}

}  // namespace lgdml
