#include "lgdml/matrix_io.hpp"

#include "lgdml/error.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace lgdml {

namespace {

constexpr std::array<char, 4> kMagic{'L', 'G', 'D', 'M'};

template <class U>
void put_le(std::ostream& os, U value) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    os.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& is, const char* what) {
    std::array<unsigned char, sizeof(U)> bytes{};
    is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (is.gcount() != static_cast<std::streamsize>(bytes.size())) fail(ErrorCode::TruncatedPayload, what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
}

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
    std::ofstream os(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
    return os;
}

std::ifstream open_in(const std::filesystem::path& path, bool binary) {
    std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
    if (!is) fail(ErrorCode::Io, "cannot read " + path.string());
    return is;
}

}  // namespace

void write_matrix(std::ostream& os, const MatD& m, Dtype dtype) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        if (!std::isfinite(m.data()[i])) fail(ErrorCode::NonFiniteValue, "index " + std::to_string(i));
    }
    os.write(kMagic.data(), kMagic.size());
    put_le<std::uint16_t>(os, kMatrixFormatVersion);
    put_le<std::uint16_t>(os, static_cast<std::uint16_t>(dtype));
    put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        if (dtype == Dtype::f32) {
            put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i])));
        } else {
            put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(m.data()[i]));
        }
    }
    if (!os) fail(ErrorCode::Io, "matrix write failed");
}

StoredMatrix read_matrix(std::istream& is) {
    std::array<char, 4> magic{};
    is.read(magic.data(), magic.size());
    if (is.gcount() != 4) fail(ErrorCode::TruncatedPayload, "header");
    if (magic != kMagic) fail(ErrorCode::BadMagic, std::string(magic.data(), magic.size()));
    const auto version = get_le<std::uint16_t>(is, "version");
    if (version != kMatrixFormatVersion) fail(ErrorCode::BadMagic, "unsupported version " + std::to_string(version));
    const auto tag = get_le<std::uint16_t>(is, "dtype");
    if (tag != static_cast<std::uint16_t>(Dtype::f32) && tag != static_cast<std::uint16_t>(Dtype::f64)) {
        fail(ErrorCode::BadMagic, "unknown dtype " + std::to_string(tag));
    }
    const auto rows = get_le<std::uint64_t>(is, "rows");
    const auto cols = get_le<std::uint64_t>(is, "cols");
    StoredMatrix out;
    out.dtype = static_cast<Dtype>(tag);
    const std::size_t width = out.dtype == Dtype::f32 ? 4 : 8;
    if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) fail(ErrorCode::TruncatedPayload, "implausible shape");
    const std::size_t count = static_cast<std::size_t>(rows * cols);
    std::vector<unsigned char> payload(count * width);
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (static_cast<std::size_t>(is.gcount()) != payload.size()) {
        fail(ErrorCode::TruncatedPayload, "expected " + std::to_string(payload.size()) + " payload bytes");
    }
    out.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* p = payload.data() + i * width;
        double v;
        if (width == 4) {
            std::uint32_t bits = 0;
            for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
            v = std::bit_cast<float>(bits);
        } else {
            std::uint64_t bits = 0;
            for (std::size_t b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
            v = std::bit_cast<double>(bits);
        }
        if (!std::isfinite(v)) fail(ErrorCode::NonFiniteValue, "index " + std::to_string(i));
        out.values.data()[i] = v;
    }
    return out;
}

void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer, bool binary) {
    auto tmp = path;
    tmp += ".tmp";
    {
        auto os = open_out(tmp, binary);
        writer(os);
        os.flush();
        if (!os) fail(ErrorCode::Io, "write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_matrix(const std::filesystem::path& path, const MatD& m, Dtype dtype) {
    atomic_write(path, [&](std::ostream& os) { write_matrix(os, m, dtype); }, true);
}

void write_matrix(const std::filesystem::path& path, const MatF& m) {
    write_matrix(path, m.cast<double>().eval(), Dtype::f32);
}

StoredMatrix read_matrix(const std::filesystem::path& path) {
    auto is = open_in(path, true);
    return read_matrix(is);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    auto is = open_in(path, false);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    atomic_write(path, [&](std::ostream& os) {
        for (const auto& l : lines) os << l << '\n';
    });
}

Labels read_labels(const std::filesystem::path& path) {
    Labels labels;
    for (const auto& line : read_lines(path)) {
        try {
            std::size_t used = 0;
            labels.push_back(std::stoi(line, &used));
            if (used != line.size()) throw std::invalid_argument(line);
        } catch (const std::exception&) {
            fail(ErrorCode::InvalidArgument, "bad label line '" + line + "' in " + path.string());
        }
    }
    return labels;
}

void write_labels(const std::filesystem::path& path, const Labels& labels) {
    std::vector<std::string> lines;
    lines.reserve(labels.size());
    for (int y : labels) lines.push_back(std::to_string(y));
    write_lines(path, lines);
}

}  // namespace lgdml
