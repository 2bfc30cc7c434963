#pragma once

// Binary file formats.
//
// Tensor file:  "MPBT" | u8 version=1 | u8 ndim | ndim x u64 dims | float64 payload
// Container:    4-byte magic | u8 version=1 | u64 header length | header JSON | float64 payload
//
// All integers and floats are little-endian; tensor payloads are last-index-fastest,
// matrix payloads column-major. Model files use magic "MPBM", FPCA files "MPBE".

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpb/error.hpp"
#include "mpb/fpca.hpp"
#include "mpb/model.hpp"
#include "mpb/tensor.hpp"

namespace mpb {

inline constexpr std::uint8_t kFormatVersion = 1;

namespace io_detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T byteswap_if_big(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        std::array<unsigned char, sizeof(T)> b;
        std::memcpy(b.data(), &v, sizeof(T));
        std::reverse(b.begin(), b.end());
        std::memcpy(&v, b.data(), sizeof(T));
    }
    return v;
}

template <class T>
void put(std::ostream& os, T v) {
    v = byteswap_if_big(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) throw ValidationError(std::string("truncated file: ") + what);
    return byteswap_if_big(v);
}

inline void put_doubles(std::ostream& os, const double* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        for (std::size_t i = 0; i < n; ++i) put(os, p[i]);
    }
}

inline void get_doubles(std::istream& is, double* p, std::size_t n, const std::string& what) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    if (is.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
        throw ValidationError("truncated payload: " + what + " (expected " + std::to_string(n) + " values)");
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < n; ++i) p[i] = byteswap_if_big(p[i]);
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) throw ValidationError("non-finite value in " + what + " at offset " + std::to_string(i));
}

inline void expect_end(std::istream& is, const std::string& what) {
    if (is.peek() != std::char_traits<char>::eof()) throw ValidationError("trailing bytes after " + what);
}

inline void check_magic(std::istream& is, const char (&magic)[5]) {
    char m[4] = {};
    is.read(m, 4);
    if (is.gcount() != 4 || std::memcmp(m, magic, 4) != 0) throw ValidationError("bad magic");
    const auto v = get<std::uint8_t>(is, "version");
    if (v != kFormatVersion) throw ValidationError("unsupported format version " + std::to_string(v));
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ValidationError("cannot open '" + path + "' for writing");
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open '" + path + "'");
    return is;
}

inline void put_matrix(std::ostream& os, const Matrix& m) { put_doubles(os, m.data(), static_cast<std::size_t>(m.size())); }

inline Matrix get_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
    Matrix m(rows, cols);
    get_doubles(is, m.data(), static_cast<std::size_t>(m.size()), what);
    return m;
}

inline void write_container(std::ostream& os, const char (&magic)[5], const nlohmann::json& header) {
    os.write(magic, 4);
    put(os, kFormatVersion);
    const std::string text = header.dump();
    put(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline nlohmann::json read_container_header(std::istream& is, const char (&magic)[5]) {
    check_magic(is, magic);
    const auto len = get<std::uint64_t>(is, "header length");
    detail::require(len <= (std::uint64_t{1} << 30), "header length " + std::to_string(len) + " is implausible");
    std::string text(static_cast<std::size_t>(len), '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (is.gcount() != static_cast<std::streamsize>(len)) throw ValidationError("truncated file: header");
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed header JSON: ") + e.what());
    }
}

template <class T>
T field(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) throw ValidationError(std::string("header: missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(std::string("header: field '") + key + "' has the wrong type");
    }
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Tensor files

inline void write_tensor(std::ostream& os, const DenseTensor& t) {
    detail::require(t.order() >= 1 && t.order() <= 255, "write_tensor: order must be in [1, 255]");
    for (double v : t.data()) detail::require(std::isfinite(v), "write_tensor: non-finite value");
    os.write("MPBT", 4);
    io_detail::put(os, kFormatVersion);
    io_detail::put(os, static_cast<std::uint8_t>(t.order()));
    for (std::size_t d : t.dims()) io_detail::put(os, static_cast<std::uint64_t>(d));
    io_detail::put_doubles(os, t.data().data(), t.size());
    if (!os) throw ValidationError("write_tensor: write failed");
}

inline DenseTensor read_tensor(std::istream& is) {
    io_detail::check_magic(is, "MPBT");
    const auto nd = io_detail::get<std::uint8_t>(is, "ndim");
    detail::require(nd >= 1, "tensor file: ndim must be >= 1");
    Dims dims;
    std::uint64_t total = 1;
    for (std::uint8_t d = 0; d < nd; ++d) {
        const auto n = io_detail::get<std::uint64_t>(is, "dims");
        detail::require(n >= 1, "tensor file: dimension " + std::to_string(d) + " is zero");
        detail::require(total <= (std::uint64_t{1} << 40) / n, "tensor file: payload size overflows");
        total *= n;
        dims.push_back(static_cast<std::size_t>(n));
    }
    DenseTensor t(dims);
    io_detail::get_doubles(is, t.data().data(), t.size(), "tensor payload");
    io_detail::expect_end(is, "tensor payload");
    return t;
}

inline void write_tensor(const std::string& path, const DenseTensor& t) {
    auto os = io_detail::open_out(path);
    write_tensor(os, t);
}

inline DenseTensor read_tensor(const std::string& path) {
    auto is = io_detail::open_in(path);
    return read_tensor(is);
}

// ---------------------------------------------------------------------------
// Bases and grids as JSON

inline nlohmann::json basis_to_json(const MarginalBasis& b) {
    if (b.kind() == BasisKind::BSpline) return {{"kind", "bspline"}, {"degree", b.degree()}, {"knots", b.knots()}};
    return {{"kind", "fourier"}, {"lower", b.lower()}, {"upper", b.upper()}, {"rank", b.rank()}, {"period", b.period()}};
}

inline MarginalBasis basis_from_json(const nlohmann::json& j) {
    const auto kind = io_detail::field<std::string>(j, "kind");
    if (kind == "bspline")
        return MarginalBasis::bspline_with_knots(io_detail::field<int>(j, "degree"),
                                                 io_detail::field<std::vector<double>>(j, "knots"));
    if (kind == "fourier")
        return MarginalBasis::fourier(io_detail::field<double>(j, "lower"), io_detail::field<double>(j, "upper"),
                                      io_detail::field<int>(j, "rank"), io_detail::field<double>(j, "period"));
    throw ValidationError("unknown basis kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Model files

inline void write_model(std::ostream& os, const MPBModel& m) {
    m.validate();
    nlohmann::json h;
    h["format"] = "mpb-model";
    h["dims"] = m.dims();
    h["rank"] = m.rank();
    h["subjects"] = m.subjects();
    h["bases"] = nlohmann::json::array();
    for (const auto& b : m.bases) h["bases"].push_back(basis_to_json(b));
    if (m.mean_offset)
        h["mean_grid"] = m.mean_grid;
    else
        h["mean_grid"] = nullptr;
    io_detail::write_container(os, "MPBM", h);
    for (const auto& c : m.coefs) io_detail::put_matrix(os, c);
    io_detail::put_matrix(os, m.subject_coefs);
    if (m.mean_offset) io_detail::put_doubles(os, m.mean_offset->data().data(), m.mean_offset->size());
    if (!os) throw ValidationError("write_model: write failed");
}

inline MPBModel read_model(std::istream& is) {
    const auto h = io_detail::read_container_header(is, "MPBM");
    const auto dims = io_detail::field<std::size_t>(h, "dims");
    const auto k = io_detail::field<Eigen::Index>(h, "rank");
    const auto n = io_detail::field<Eigen::Index>(h, "subjects");
    const auto& bj = h.at("bases");
    detail::require(bj.is_array() && bj.size() == dims, "model header: need one basis per dimension");
    detail::require(k >= 1 && n >= 0, "model header: rank must be >= 1 and subjects >= 0");
    MPBModel m;
    for (const auto& b : bj) m.bases.push_back(basis_from_json(b));
    for (std::size_t d = 0; d < dims; ++d)
        m.coefs.push_back(io_detail::get_matrix(is, m.bases[d].rank(), k, "C_" + std::to_string(d)));
    m.subject_coefs = io_detail::get_matrix(is, n, k, "B");
    if (h.contains("mean_grid") && !h.at("mean_grid").is_null()) {
        m.mean_grid = io_detail::field<Grid>(h, "mean_grid");
        detail::require(m.mean_grid.size() == dims, "model header: mean grid must have one axis per dimension");
        Dims md;
        for (const auto& g : m.mean_grid) md.push_back(g.size());
        DenseTensor mean(md);
        io_detail::get_doubles(is, mean.data().data(), mean.size(), "mean");
        m.mean_offset = std::move(mean);
    }
    io_detail::expect_end(is, "model payload");
    m.validate();
    return m;
}

inline void write_model(const std::string& path, const MPBModel& m) {
    auto os = io_detail::open_out(path);
    write_model(os, m);
}

inline MPBModel read_model(const std::string& path) {
    auto is = io_detail::open_in(path);
    return read_model(is);
}

// ---------------------------------------------------------------------------
// FPCA files: S (K x K'), nu, cumulative variance, scores (N x K')

inline void write_fpca(std::ostream& os, const FPCAResult& r) {
    const auto kp = r.s.cols();
    detail::require(r.nu.size() == kp && r.var_explained.size() == kp, "write_fpca: inconsistent component counts");
    detail::require(r.scores.size() == 0 || r.scores.cols() == kp, "write_fpca: score columns must match components");
    nlohmann::json h;
    h["format"] = "mpb-fpca";
    h["rank"] = r.s.rows();
    h["components"] = kp;
    h["subjects"] = r.scores.rows();
    h["lambda"] = r.lambda;
    io_detail::write_container(os, "MPBE", h);
    io_detail::put_matrix(os, r.s);
    io_detail::put_matrix(os, r.nu);
    io_detail::put_matrix(os, r.var_explained);
    io_detail::put_matrix(os, r.scores);
    if (!os) throw ValidationError("write_fpca: write failed");
}

inline FPCAResult read_fpca(std::istream& is) {
    const auto h = io_detail::read_container_header(is, "MPBE");
    const auto k = io_detail::field<Eigen::Index>(h, "rank");
    const auto kp = io_detail::field<Eigen::Index>(h, "components");
    const auto n = io_detail::field<Eigen::Index>(h, "subjects");
    detail::require(k >= 1 && kp >= 1 && kp <= k && n >= 0, "fpca header: inconsistent sizes");
    FPCAResult r;
    r.lambda = io_detail::field<double>(h, "lambda");
    r.s = io_detail::get_matrix(is, k, kp, "S");
    r.nu = io_detail::get_matrix(is, kp, 1, "nu");
    r.var_explained = io_detail::get_matrix(is, kp, 1, "variance explained");
    r.scores = io_detail::get_matrix(is, n, kp, "scores");
    io_detail::expect_end(is, "fpca payload");
    return r;
}

inline void write_fpca(const std::string& path, const FPCAResult& r) {
    auto os = io_detail::open_out(path);
    write_fpca(os, r);
}

inline FPCAResult read_fpca(const std::string& path) {
    auto is = io_detail::open_in(path);
    return read_fpca(is);
}

}  // namespace mpb
