#include "doctest.h"
#include "helpers.hpp"

#include "lgdml/error.hpp"
#include "lgdml/matrix_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

using namespace lgdml;

namespace {

// FNV-1a over the single-precision bit patterns of a matrix.
std::uint64_t fnv1a_f32(const MatD& m) {
    std::uint64_t h = 1469598103934665603ULL;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const float f = static_cast<float>(m.data()[i]);
        unsigned char bytes[4];
        std::memcpy(bytes, &f, 4);
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

template <class F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return ErrorCode::Io;
}

}  // namespace

TEST_CASE("identity round trip is bit-identical in both dtypes") {
    const MatD eye = MatD::Identity(3, 3);
    for (Dtype dt : {Dtype::f32, Dtype::f64}) {
        std::stringstream ss;
        write_matrix(ss, eye, dt);
        const auto back = read_matrix(ss);
        CHECK(back.dtype == dt);
        CHECK(back.values == eye);
    }
}

TEST_CASE("header layout is little-endian") {
    MatD m(2, 1);
    m << 1.0, -2.0;
    std::stringstream ss;
    write_matrix(ss, m, Dtype::f32);
    const std::string b = ss.str();
    REQUIRE(b.size() == 24 + 8);
    CHECK(b.substr(0, 4) == "LGDM");
    CHECK(b[4] == 1);
    CHECK(b[5] == 0);
    CHECK(b[6] == 1);
    CHECK(b[8] == 2);
    CHECK(b[16] == 1);
    float second;
    std::memcpy(&second, b.data() + 28, 4);
    CHECK(second == -2.0f);
}

TEST_CASE("large f32 round trip preserves the hash") {
    Rng rng(1);
    const MatD m = testutil::gaussian(rng, 1000, 64);
    testutil::TempDir dir("matrix");
    write_matrix(dir / "m.lgdm", m, Dtype::f32);
    const auto back = read_matrix(dir / "m.lgdm");
    CHECK(back.dtype == Dtype::f32);
    CHECK(fnv1a_f32(back.values) == fnv1a_f32(m));

    write_matrix(dir / "again.lgdm", back.values, Dtype::f32);
    CHECK(file_bytes(dir / "m.lgdm") == file_bytes(dir / "again.lgdm"));
}

TEST_CASE("malformed files") {
    const MatD m = MatD::Ones(2, 2);
    std::stringstream good;
    write_matrix(good, m, Dtype::f64);
    const std::string bytes = good.str();

    SUBCASE("wrong magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        std::stringstream ss(bad);
        CHECK(code_of([&] { read_matrix(ss); }) == ErrorCode::BadMagic);
    }
    SUBCASE("short payload") {
        std::stringstream ss(bytes.substr(0, bytes.size() - 3));
        CHECK(code_of([&] { read_matrix(ss); }) == ErrorCode::TruncatedPayload);
    }
    SUBCASE("short header") {
        std::stringstream ss(bytes.substr(0, 10));
        CHECK(code_of([&] { read_matrix(ss); }) == ErrorCode::TruncatedPayload);
    }
    SUBCASE("non-finite value on read") {
        std::string bad = bytes;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        std::memcpy(bad.data() + 24 + 8 * 3, &nan, 8);
        std::stringstream ss(bad);
        try {
            read_matrix(ss);
            FAIL("expected NonFiniteValue");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::NonFiniteValue);
            CHECK(std::string(e.what()).find("index 3") != std::string::npos);
        }
    }
    SUBCASE("non-finite value on write") {
        MatD inf = m;
        inf(1, 0) = std::numeric_limits<double>::infinity();
        std::stringstream ss;
        CHECK(code_of([&] { write_matrix(ss, inf, Dtype::f64); }) == ErrorCode::NonFiniteValue);
    }
    SUBCASE("missing file") {
        CHECK(code_of([] { read_matrix(std::filesystem::path("/nonexistent/x.lgdm")); }) == ErrorCode::Io);
    }
}

TEST_CASE("atomic_write leaves no temporary behind") {
    testutil::TempDir dir("atomic");
    atomic_write(dir / "out.txt", [](std::ostream& os) { os << "hello\n"; });
    CHECK(file_bytes(dir / "out.txt") == "hello\n");
    CHECK_FALSE(std::filesystem::exists(dir / "out.txt.tmp"));
}

TEST_CASE("labels and lines round trip") {
    testutil::TempDir dir("lines");
    const Labels y{3, 0, 12, 7};
    write_labels(dir / "y.txt", y);
    CHECK(read_labels(dir / "y.txt") == y);
    const std::vector<std::string> lines{"Shiny Cowbird", "Blue Jay", "caf\xc3\xa9"};
    write_lines(dir / "names.txt", lines);
    CHECK(read_lines(dir / "names.txt") == lines);
}
