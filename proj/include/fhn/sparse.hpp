#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace fhn {

using Vector = std::vector<double>;

struct Triplet {
    int row;
    int col;
    double value;
};

/// General sparse matrix in compressed row storage. Column indices are sorted
/// and unique within each row.
class SparseMatrix {
public:
    SparseMatrix() = default;
    SparseMatrix(int rows, int cols) : rows_(rows), cols_(cols), offsets_(rows + 1, 0) {}

    /// Sums duplicate entries. Explicit zeros are kept so that patterns can be
    /// shared between matrices assembled from the same couplings.
    static SparseMatrix from_triplets(int rows, int cols, std::vector<Triplet> entries)
    {
        for (const auto& t : entries)
            if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
                throw std::out_of_range("SparseMatrix::from_triplets: index out of range");
        std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
            return std::tie(a.row, a.col) < std::tie(b.row, b.col);
        });
        SparseMatrix m(rows, cols);
        m.columns_.reserve(entries.size());
        m.values_.reserve(entries.size());
        for (std::size_t i = 0; i < entries.size();) {
            const int r = entries[i].row;
            const int c = entries[i].col;
            double sum = 0.0;
            for (; i < entries.size() && entries[i].row == r && entries[i].col == c; ++i) sum += entries[i].value;
            m.columns_.push_back(c);
            m.values_.push_back(sum);
            ++m.offsets_[r + 1];
        }
        std::partial_sum(m.offsets_.begin(), m.offsets_.end(), m.offsets_.begin());
        return m;
    }

    static SparseMatrix identity(int n)
    {
        std::vector<Triplet> t;
        t.reserve(n);
        for (int i = 0; i < n; ++i) t.push_back({i, i, 1.0});
        return from_triplets(n, n, std::move(t));
    }

    [[nodiscard]] int rows() const { return rows_; }
    [[nodiscard]] int cols() const { return cols_; }
    [[nodiscard]] std::size_t nonzeros() const { return values_.size(); }

    [[nodiscard]] std::span<const int> offsets() const { return offsets_; }
    [[nodiscard]] std::span<const int> columns() const { return columns_; }
    [[nodiscard]] std::span<const double> values() const { return values_; }
    [[nodiscard]] std::span<double> values() { return values_; }

    /// Position of (row, col) in the value array, or -1 if not stored.
    [[nodiscard]] std::ptrdiff_t find(int row, int col) const
    {
        const auto first = columns_.begin() + offsets_[row];
        const auto last = columns_.begin() + offsets_[row + 1];
        const auto it = std::lower_bound(first, last, col);
        if (it == last || *it != col) return -1;
        return it - columns_.begin();
    }

    [[nodiscard]] double operator()(int row, int col) const
    {
        const auto pos = find(row, col);
        return pos < 0 ? 0.0 : values_[pos];
    }

    void multiply(std::span<const double> x, std::span<double> y) const
    {
        if (static_cast<int>(x.size()) != cols_ || static_cast<int>(y.size()) != rows_)
            throw std::invalid_argument("SparseMatrix::multiply: dimension mismatch");
        for (int r = 0; r < rows_; ++r) {
            double s = 0.0;
            for (int p = offsets_[r]; p < offsets_[r + 1]; ++p) s += values_[p] * x[columns_[p]];
            y[r] = s;
        }
    }

    [[nodiscard]] Vector operator*(std::span<const double> x) const
    {
        Vector y(rows_);
        multiply(x, y);
        return y;
    }

    [[nodiscard]] Vector transpose_multiply(std::span<const double> x) const
    {
        if (static_cast<int>(x.size()) != rows_)
            throw std::invalid_argument("SparseMatrix::transpose_multiply: dimension mismatch");
        Vector y(cols_, 0.0);
        for (int r = 0; r < rows_; ++r)
            for (int p = offsets_[r]; p < offsets_[r + 1]; ++p) y[columns_[p]] += values_[p] * x[r];
        return y;
    }

    [[nodiscard]] SparseMatrix transpose() const
    {
        std::vector<Triplet> t;
        t.reserve(nonzeros());
        for (int r = 0; r < rows_; ++r)
            for (int p = offsets_[r]; p < offsets_[r + 1]; ++p) t.push_back({columns_[p], r, values_[p]});
        return from_triplets(cols_, rows_, std::move(t));
    }

    [[nodiscard]] std::vector<Triplet> triplets() const
    {
        std::vector<Triplet> t;
        t.reserve(nonzeros());
        for (int r = 0; r < rows_; ++r)
            for (int p = offsets_[r]; p < offsets_[r + 1]; ++p) t.push_back({r, columns_[p], values_[p]});
        return t;
    }

    SparseMatrix& operator*=(double a)
    {
        for (double& v : values_) v *= a;
        return *this;
    }

    [[nodiscard]] double max_abs() const
    {
        double m = 0.0;
        for (double v : values_) m = std::max(m, std::abs(v));
        return m;
    }

    [[nodiscard]] bool same_pattern(const SparseMatrix& other) const
    {
        return rows_ == other.rows_ && cols_ == other.cols_ && offsets_ == other.offsets_ &&
               columns_ == other.columns_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<int> offsets_{0};
    std::vector<int> columns_;
    std::vector<double> values_;
};

/// alpha*A + beta*B on the union of both patterns.
inline SparseMatrix add_scaled(const SparseMatrix& a, const SparseMatrix& b, double alpha, double beta)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("add_scaled: dimension mismatch");
    std::vector<Triplet> t;
    t.reserve(a.nonzeros() + b.nonzeros());
    for (auto e : a.triplets()) t.push_back({e.row, e.col, alpha * e.value});
    for (auto e : b.triplets()) t.push_back({e.row, e.col, beta * e.value});
    return SparseMatrix::from_triplets(a.rows(), a.cols(), std::move(t));
}

inline Vector matvec(const SparseMatrix& a, std::span<const double> x) { return a * x; }

/// Block matrix [[A, B], [C, D]] with square blocks of equal size.
inline SparseMatrix block2x2(const SparseMatrix& a, const SparseMatrix& b, const SparseMatrix& c,
                             const SparseMatrix& d)
{
    const int n = a.rows();
    for (const SparseMatrix* m : {&a, &b, &c, &d})
        if (m->rows() != n || m->cols() != n) throw std::invalid_argument("block2x2: blocks must be n x n");
    std::vector<Triplet> t;
    t.reserve(a.nonzeros() + b.nonzeros() + c.nonzeros() + d.nonzeros());
    auto put = [&t](const SparseMatrix& m, int r0, int c0) {
        for (auto e : m.triplets()) t.push_back({e.row + r0, e.col + c0, e.value});
    };
    put(a, 0, 0);
    put(b, 0, n);
    put(c, n, 0);
    put(d, n, n);
    return SparseMatrix::from_triplets(2 * n, 2 * n, std::move(t));
}

inline double dot(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y)
{
    if (x.size() != y.size()) throw std::invalid_argument("axpy: dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

/// MatrixMarket coordinate (real general) export.
inline void write_matrix_market(std::ostream& os, const SparseMatrix& a)
{
    os << "%%MatrixMarket matrix coordinate real general\n";
    os << a.rows() << ' ' << a.cols() << ' ' << a.nonzeros() << '\n';
    const auto prec = os.precision(17);
    for (auto e : a.triplets()) os << e.row + 1 << ' ' << e.col + 1 << ' ' << e.value << '\n';
    os.precision(prec);
}

} // namespace fhn
