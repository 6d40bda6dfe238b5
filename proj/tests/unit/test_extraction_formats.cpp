#include "doctest.h"
#include "helpers.hpp"

#include "lgdml/dataset.hpp"
#include "lgdml/error.hpp"
#include "lgdml/matrix_io.hpp"

#include <fstream>

using namespace lgdml;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

MatD as_f32(const MatD& m) { return m.cast<float>().cast<double>(); }

// Writes a directory the way the offline exporter does: single-precision
// matrices, cleaned names, one primer line.
void write_export(const std::filesystem::path& dir, Rng& rng) {
    std::filesystem::create_directories(dir);
    const int n_train = 12, n_test = 6, feat = 10, n_pre = 8;
    write_matrix(dir / "train_features.lgdm", as_f32(testutil::gaussian(rng, n_train, feat)), Dtype::f32);
    write_matrix(dir / "test_features.lgdm", as_f32(testutil::gaussian(rng, n_test, feat)), Dtype::f32);
    Labels train, test;
    for (int i = 0; i < n_train; ++i) train.push_back(i % 3);
    for (int i = 0; i < n_test; ++i) test.push_back(3 + i % 2);
    write_labels(dir / "train_labels.txt", train);
    write_labels(dir / "test_labels.txt", test);
    const std::vector<std::string> classes{"Shiny Cowbird", "Blue Jay", "House Wren", "Herring Gull", "Song Sparrow"};
    write_lines(dir / "class_names.txt", classes);
    write_lines(dir / "primer.txt", {"A photo of a {}"});
    write_matrix(dir / "lang.lgdm", as_f32(testutil::unit_rows(rng, 5, 6)), Dtype::f32);
    write_lines(dir / "lang_names.txt", classes);
    write_matrix(dir / "lang_1.lgdm", as_f32(testutil::unit_rows(rng, 5, 4)), Dtype::f32);
    write_lines(dir / "lang_1_names.txt", classes);

    std::vector<std::string> captions;
    for (int i = 0; i < n_train; ++i) captions.push_back(sample_key(static_cast<std::size_t>(i)));
    write_matrix(dir / "captions.lgdm", as_f32(testutil::unit_rows(rng, n_train, 6)), Dtype::f32);
    write_lines(dir / "captions_names.txt", captions);

    std::vector<std::string> pretrain;
    for (int i = 0; i < n_pre; ++i) pretrain.push_back("pretrain class " + std::to_string(i));
    write_matrix(dir / "posteriors.lgdm", as_f32(testutil::naive_softmax(testutil::gaussian(rng, n_train, n_pre), 0, 1)),
                 Dtype::f32);
    write_lines(dir / "pretrain_names.txt", pretrain);
    write_matrix(dir / "pseudo_lang.lgdm", as_f32(testutil::unit_rows(rng, n_pre, 6)), Dtype::f32);
    write_lines(dir / "pseudo_lang_names.txt", pretrain);
}

}  // namespace

TEST_CASE("exported files load, keep posterior mass and re-export byte for byte") {
    testutil::TempDir dir("extract");
    Rng rng(42);
    write_export(dir / "export", rng);

    const auto bundle = load_bundle(dir / "export");
    REQUIRE(bundle.train_posteriors);
    for (Eigen::Index i = 0; i < bundle.train_posteriors->data.rows(); ++i) {
        CHECK(std::abs(bundle.train_posteriors->data.row(i).sum() - 1.0) <= 1e-4);
    }
    REQUIRE(bundle.class_language);
    CHECK(bundle.class_language->primer() == "A photo of a {}");
    CHECK(bundle.extra_class_language.size() == 1);
    REQUIRE(bundle.sample_language);
    REQUIRE(bundle.pseudo_language);

    save_bundle(dir / "reexport", bundle);
    std::size_t compared = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir / "export")) {
        const auto name = entry.path().filename();
        INFO(name.string());
        REQUIRE(std::filesystem::exists(dir / "reexport" / name));
        CHECK(file_bytes(entry.path()) == file_bytes(dir / "reexport" / name));
        ++compared;
    }
    CHECK(compared == 16);
}

TEST_CASE("posterior rows off by more than the tolerance are renormalised on load") {
    testutil::TempDir dir("extract_post");
    Rng rng(7);
    write_export(dir.path(), rng);
    MatD post = read_matrix(dir / "posteriors.lgdm").values;
    post.row(0) *= 1.01;
    write_matrix(dir / "posteriors.lgdm", post, Dtype::f32);
    const auto bundle = load_bundle(dir.path());
    CHECK(std::abs(bundle.train_posteriors->data.row(0).sum() - 1.0) < 1e-12);
}

TEST_CASE("export with mismatched name sidecar is rejected") {
    testutil::TempDir dir("extract_bad");
    Rng rng(9);
    write_export(dir.path(), rng);
    write_lines(dir / "lang_names.txt", {"Shiny Cowbird", "Blue Jay"});
    CHECK_THROWS_AS(load_bundle(dir.path()), Error);
}
