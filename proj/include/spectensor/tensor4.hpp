#pragma once

#include "core.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace spectensor {

/// Dense order-4 tensor over R^d.
///
/// Entries are stored in canonical order with the last index fastest:
/// offset(i, j, k, l) = ((i * d + j) * d + k) * d + l. Under this order the
/// {1,2}{3,4} unfolding is the row-major d^2 x d^2 matrix over the same
/// buffer, which is the hot path for every algorithm in the library.
class Tensor4 {
public:
    Tensor4() = default;

    explicit Tensor4(Index dim) : dim_(dim), data_(checked_size(dim), 0.0) {}

    Tensor4(Index dim, std::vector<double> entries) : dim_(dim), data_(std::move(entries)) {
        if (data_.size() != checked_size(dim))
            throw DimensionError("Tensor4: expected d^4 = " + std::to_string(checked_size(dim)) +
                                 " entries, got " + std::to_string(data_.size()));
        for (double x : data_)
            if (!std::isfinite(x)) throw DomainError("Tensor4: non-finite entry");
    }

    /// Tensor whose {1,2}{3,4} unfolding is `m` (d^2 x d^2).
    static Tensor4 from_square_unfolding(const Matrix& m) {
        const Index d = side_from_square(m.rows());
        if (m.cols() != m.rows()) throw DimensionError("from_square_unfolding: matrix must be square");
        Tensor4 t(d);
        Eigen::Map<RowMatrix>(t.data_.data(), d * d, d * d) = m;
        return t;
    }

    /// v (x) v (x) v (x) v
    static Tensor4 rank_one(const Vector& v) {
        const Index d = v.size();
        Tensor4 t(d);
        const Vector vv = kron(v, v);
        t.square() = vv * vv.transpose();
        return t;
    }

    Index dim() const { return dim_; }
    std::size_t size() const { return data_.size(); }
    std::span<const double> entries() const { return data_; }
    std::span<double> entries() { return data_; }

    std::size_t offset(Index i, Index j, Index k, Index l) const {
        return static_cast<std::size_t>(((i * dim_ + j) * dim_ + k) * dim_ + l);
    }
    double operator()(Index i, Index j, Index k, Index l) const { return data_[offset(i, j, k, l)]; }
    double& operator()(Index i, Index j, Index k, Index l) { return data_[offset(i, j, k, l)]; }

    /// Zero-copy view of the {1,2}{3,4} unfolding.
    Eigen::Map<const RowMatrix> square() const {
        return {data_.data(), dim_ * dim_, dim_ * dim_};
    }
    Eigen::Map<RowMatrix> square() { return {data_.data(), dim_ * dim_, dim_ * dim_}; }

    /// Zero-copy view of the {1,2,3}{4} unfolding (d^3 x d).
    Eigen::Map<const RowMatrix> tall() const { return {data_.data(), dim_ * dim_ * dim_, dim_}; }
    Eigen::Map<RowMatrix> tall() { return {data_.data(), dim_ * dim_ * dim_, dim_}; }

    Tensor4& operator+=(const Tensor4& o) {
        require_same_dim(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor4& operator-=(const Tensor4& o) {
        require_same_dim(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor4& operator*=(double s) {
        for (double& x : data_) x *= s;
        return *this;
    }
    friend Tensor4 operator+(Tensor4 a, const Tensor4& b) { return a += b; }
    friend Tensor4 operator-(Tensor4 a, const Tensor4& b) { return a -= b; }
    friend Tensor4 operator*(double s, Tensor4 a) { return a *= s; }

    /// Adds w * v^{(x)4}.
    void add_rank_one(const Vector& v, double w = 1.0) {
        if (v.size() != dim_) throw DimensionError("add_rank_one: dimension mismatch");
        const Vector vv = kron(v, v);
        square().noalias() += w * vv * vv.transpose();
    }

    bool operator==(const Tensor4& o) const { return dim_ == o.dim_ && data_ == o.data_; }

    static Vector kron(const Vector& a, const Vector& b) {
        Vector out(a.size() * b.size());
        for (Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a[i] * b;
        return out;
    }

    static Index side_from_square(Index n) {
        const auto d = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(n))));
        if (d <= 0 || d * d != n) throw DimensionError("size " + std::to_string(n) + " is not a perfect square");
        return d;
    }

private:
    static std::size_t checked_size(Index dim) {
        if (dim <= 0) throw DomainError("Tensor4: dimension must be positive");
        const auto d = static_cast<std::size_t>(dim);
        return d * d * d * d;
    }
    void require_same_dim(const Tensor4& o) const {
        if (o.dim_ != dim_) throw DimensionError("Tensor4: dimension mismatch");
    }

    Index dim_ = 0;
    std::vector<double> data_;
};

inline double frobenius(const Tensor4& t) {
    double s = 0.0;
    for (double x : t.entries()) s += x * x;
    return std::sqrt(s);
}

inline double frobenius(const Matrix& m) { return m.norm(); }

/// Ordered bipartition of the modes {1,2,3,4}. The first mode in each group is
/// the most significant digit of the row (column) index.
class ReshapePlan {
public:
    static ReshapePlan make(std::vector<int> row_modes, std::vector<int> col_modes) {
        if (row_modes.empty() || col_modes.empty()) throw PlanError("reshape plan: both mode groups must be non-empty");
        std::array<int, 5> seen{};
        for (int m : row_modes) {
            if (m < 1 || m > 4) throw PlanError("reshape plan: mode " + std::to_string(m) + " out of range 1..4");
            if (seen[m]++) throw PlanError("reshape plan: mode " + std::to_string(m) + " repeated");
        }
        for (int m : col_modes) {
            if (m < 1 || m > 4) throw PlanError("reshape plan: mode " + std::to_string(m) + " out of range 1..4");
            if (seen[m]++) throw PlanError("reshape plan: mode " + std::to_string(m) + " repeated");
        }
        if (row_modes.size() + col_modes.size() != 4) throw PlanError("reshape plan: every mode must appear once");
        return ReshapePlan(std::move(row_modes), std::move(col_modes));
    }

    static ReshapePlan square12_34() { return make({1, 2}, {3, 4}); }
    static ReshapePlan square13_24() { return make({1, 3}, {2, 4}); }
    static ReshapePlan tall123_4() { return make({1, 2, 3}, {4}); }
    static ReshapePlan tall124_3() { return make({1, 2, 4}, {3}); }

    const std::vector<int>& row_modes() const { return rows_; }
    const std::vector<int>& col_modes() const { return cols_; }

    bool operator==(const ReshapePlan&) const = default;

private:
    ReshapePlan(std::vector<int> r, std::vector<int> c) : rows_(std::move(r)), cols_(std::move(c)) {}
    std::vector<int> rows_, cols_;
};

/// A matrix unfolding of a tensor, remembering the plan it came from.
struct MatrixView {
    Matrix values;
    std::optional<ReshapePlan> plan;

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }
};

namespace detail {

inline Index group_index(const std::array<Index, 4>& idx, const std::vector<int>& modes, Index d) {
    Index r = 0;
    for (int m : modes) r = r * d + idx[static_cast<std::size_t>(m - 1)];
    return r;
}

inline Index ipow(Index d, std::size_t e) {
    Index r = 1;
    while (e--) r *= d;
    return r;
}

}  // namespace detail

inline MatrixView reshape(const Tensor4& t, const ReshapePlan& plan) {
    const Index d = t.dim();
    MatrixView out{Matrix(detail::ipow(d, plan.row_modes().size()), detail::ipow(d, plan.col_modes().size())), plan};
    std::array<Index, 4> idx{};
    auto it = t.entries().begin();
    for (idx[0] = 0; idx[0] < d; ++idx[0])
        for (idx[1] = 0; idx[1] < d; ++idx[1])
            for (idx[2] = 0; idx[2] < d; ++idx[2])
                for (idx[3] = 0; idx[3] < d; ++idx[3])
                    out.values(detail::group_index(idx, plan.row_modes(), d),
                               detail::group_index(idx, plan.col_modes(), d)) = *it++;
    return out;
}

/// Inverse of reshape: folds a matrix unfolding back into a tensor.
inline Tensor4 unreshape(const Matrix& m, const ReshapePlan& plan, Index d) {
    if (m.rows() != detail::ipow(d, plan.row_modes().size()) || m.cols() != detail::ipow(d, plan.col_modes().size()))
        throw DimensionError("unreshape: matrix shape does not match plan");
    Tensor4 t(d);
    std::array<Index, 4> idx{};
    auto it = t.entries().begin();
    for (idx[0] = 0; idx[0] < d; ++idx[0])
        for (idx[1] = 0; idx[1] < d; ++idx[1])
            for (idx[2] = 0; idx[2] < d; ++idx[2])
                for (idx[3] = 0; idx[3] < d; ++idx[3])
                    *it++ = m(detail::group_index(idx, plan.row_modes(), d), detail::group_index(idx, plan.col_modes(), d));
    return t;
}

inline Tensor4 unreshape(const MatrixView& m, Index d) {
    if (!m.plan) throw PlanError("unreshape: matrix view has no originating plan");
    return unreshape(m.values, *m.plan, d);
}

/// Applies a mode permutation: out(idx[perm[0]], ..., idx[perm[3]]) = t(idx).
inline Tensor4 permute_modes(const Tensor4& t, const std::array<int, 4>& perm) {
    const Index d = t.dim();
    Tensor4 out(d);
    std::array<Index, 4> idx{};
    auto it = t.entries().begin();
    for (idx[0] = 0; idx[0] < d; ++idx[0])
        for (idx[1] = 0; idx[1] < d; ++idx[1])
            for (idx[2] = 0; idx[2] < d; ++idx[2])
                for (idx[3] = 0; idx[3] < d; ++idx[3])
                    out(idx[perm[0]], idx[perm[1]], idx[perm[2]], idx[perm[3]]) = *it++;
    return out;
}

/// Average over all 24 mode permutations.
inline Tensor4 symmetrize(const Tensor4& t) {
    std::array<int, 4> perm{0, 1, 2, 3};
    Tensor4 acc(t.dim());
    do {
        acc += permute_modes(t, perm);
    } while (std::next_permutation(perm.begin(), perm.end()));
    acc *= 1.0 / 24.0;
    return acc;
}

// ---------------------------------------------------------------------------
// Binary I/O. Both formats are little-endian.

namespace io {

template <class T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    os.write(bytes.data(), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const char* what) {
    std::array<char, sizeof(T)> bytes;
    if (!is.read(bytes.data(), sizeof(T))) throw ParseError(std::string("truncated file while reading ") + what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
    char buf[4];
    if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
        throw ParseError(std::string("bad magic, expected ") + magic);
}

}  // namespace io

/// `.t4`: "T4v1", u64 d, then d^4 float64 entries in canonical order.
inline void write_t4(std::ostream& os, const Tensor4& t) {
    os.write("T4v1", 4);
    io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.dim()));
    for (double x : t.entries()) io::write_le(os, x);
}

inline Tensor4 read_t4(std::istream& is) {
    io::expect_magic(is, "T4v1");
    const auto d = io::read_le<std::uint64_t>(is, "dimension");
    if (d == 0 || d > 4096) throw ParseError("t4: implausible dimension " + std::to_string(d));
    std::vector<double> entries(d * d * d * d);
    for (double& x : entries) x = io::read_le<double>(is, "entries");
    if (is.peek() != std::char_traits<char>::eof()) throw ParseError("t4: trailing bytes after entries");
    return Tensor4(static_cast<Index>(d), std::move(entries));
}

inline void save_t4(const std::string& path, const Tensor4& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    write_t4(os, t);
}

inline Tensor4 load_t4(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path);
    return read_t4(is);
}

/// Dense MatrixMarket "array" text, for debugging.
inline void write_mtx(std::ostream& os, const Matrix& m) {
    os << "%%MatrixMarket matrix array real general\n" << m.rows() << ' ' << m.cols() << '\n';
    os.precision(17);
    for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i) os << m(i, j) << '\n';
}

}  // namespace spectensor
