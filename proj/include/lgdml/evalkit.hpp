#pragma once

#include "lgdml/language_table.hpp"
#include "lgdml/matrix.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace lgdml {

struct EvalReport {
    std::map<int, double> recall_at;
    double nmi = 0.0;
    double map_at_1000 = 0.0;
};

struct RetrievedClass {
    int label;
    std::string name;
    long count;
    double language_similarity;
};

struct ClassProfile {
    int query_label;
    std::string query_name;
    long n_queries;
    long total_retrieved;              // top_n * n_queries
    std::vector<RetrievedClass> top;   // descending language similarity
};

struct RetrievalProfile {
    std::vector<ClassProfile> classes;
};

/// Gallery order for every query: all other samples by descending cosine,
/// ties by ascending index.
std::vector<std::vector<int>> ranked_neighbors(const MatD& emb, std::size_t limit);

std::map<int, double> recall_at_k(const MatD& emb, const Labels& labels, const std::vector<int>& ks);

/// NMI with arithmetic-mean normalisation; 1 when both partitions are trivial.
double normalized_mutual_information(const std::vector<int>& a, const std::vector<int>& b);

struct KMeansResult {
    std::vector<int> assignment;
    double inertia = 0.0;
};

KMeansResult kmeans(const MatD& points, int k, std::uint64_t seed, int restarts = 10, int max_iter = 100);

double nmi(const MatD& emb, const Labels& labels, std::uint64_t seed);

double map_at_1000(const MatD& emb, const Labels& labels);

EvalReport evaluate(const MatD& emb, const Labels& labels, const std::vector<int>& ks, std::uint64_t seed);

RetrievalProfile semantic_retrieval_profile(const MatD& emb, const Labels& labels,
                                            const std::vector<std::string>& class_names, const LanguageTable& lang,
                                            int top_n = 20, int top_classes = 5);

/// Row-wise KL between masked embedding similarities and class-name language
/// similarities over the whole set.
double alignment_divergence(const MatD& emb, const Labels& labels, const std::vector<std::string>& class_names,
                            const LanguageTable& lang, double gamma_lang, double temperature);

void write_eval_report(std::ostream& os, const EvalReport& report);
void write_retrieval_profile_csv(std::ostream& os, const RetrievalProfile& profile);

}  // namespace lgdml
