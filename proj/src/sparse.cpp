#include "xcg/sparse.hpp"

#include "xcg/error.hpp"

#include <algorithm>
#include <string>

namespace xcg {

SparseMatrix::SparseMatrix(std::int32_t rows, std::int32_t cols)
    : rows_(rows), cols_(cols), row_ptr_(static_cast<std::size_t>(rows) + 1, 0) {
    require(rows >= 0 && cols >= 0, "precondition", "negative sparse matrix dimension");
}

SparseMatrix SparseMatrix::from_triplets(std::int32_t rows, std::int32_t cols,
                                         std::vector<Triplet> triplets) {
    SparseMatrix m(rows, cols);
    for (const auto& t : triplets) {
        require(t.row >= 0 && t.row < rows && t.col >= 0 && t.col < cols, "precondition",
                "triplet (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                    ") out of range");
    }
    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::size_t i = 0;
    while (i < triplets.size()) {
        const auto row = triplets[i].row;
        const auto col = triplets[i].col;
        double sum = 0.0;
        while (i < triplets.size() && triplets[i].row == row && triplets[i].col == col) {
            sum += triplets[i].value;
            ++i;
        }
        if (sum != 0.0) {
            m.col_idx_.push_back(col);
            m.values_.push_back(sum);
            ++m.row_ptr_[static_cast<std::size_t>(row) + 1];
        }
    }
    for (std::int32_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
    return m;
}

SparseMatrix SparseMatrix::from_csr(std::int32_t rows, std::int32_t cols,
                                    std::vector<std::int64_t> row_ptr,
                                    std::vector<std::int32_t> col_idx,
                                    std::vector<double> values) {
    require(rows >= 0 && cols >= 0, "schema", "negative sparse matrix dimension");
    require(row_ptr.size() == static_cast<std::size_t>(rows) + 1 && row_ptr.front() == 0,
            "schema", "row_ptr has wrong length or does not start at 0");
    require(col_idx.size() == values.size() &&
                row_ptr.back() == static_cast<std::int64_t>(values.size()),
            "schema", "row_ptr/col_idx/values lengths disagree");
    for (std::int32_t r = 0; r < rows; ++r) {
        require(row_ptr[r] <= row_ptr[r + 1], "schema", "row_ptr not monotone");
        for (auto p = row_ptr[r]; p < row_ptr[r + 1]; ++p) {
            require(col_idx[p] >= 0 && col_idx[p] < cols, "schema", "column index out of range");
            require(p == row_ptr[r] || col_idx[p - 1] < col_idx[p], "schema",
                    "column indices not sorted/unique in row " + std::to_string(r));
            require(values[p] != 0.0, "schema", "explicit zero stored");
        }
    }
    SparseMatrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.row_ptr_ = std::move(row_ptr);
    m.col_idx_ = std::move(col_idx);
    m.values_ = std::move(values);
    return m;
}

SparseMatrix SparseMatrix::identity(std::int32_t n) {
    SparseMatrix m(n, n);
    m.col_idx_.resize(static_cast<std::size_t>(n));
    m.values_.assign(static_cast<std::size_t>(n), 1.0);
    for (std::int32_t i = 0; i < n; ++i) {
        m.col_idx_[i] = i;
        m.row_ptr_[i + 1] = i + 1;
    }
    return m;
}

double SparseMatrix::coeff(std::int32_t r, std::int32_t c) const {
    const auto cols = row_indices(r);
    const auto it = std::lower_bound(cols.begin(), cols.end(), c);
    if (it == cols.end() || *it != c) return 0.0;
    return values_[static_cast<std::size_t>(row_ptr_[r] + (it - cols.begin()))];
}

SparseMatrix SparseMatrix::transpose() const {
    SparseMatrix t(cols_, rows_);
    t.col_idx_.resize(col_idx_.size());
    t.values_.resize(values_.size());
    for (auto c : col_idx_) ++t.row_ptr_[static_cast<std::size_t>(c) + 1];
    for (std::int32_t r = 0; r < cols_; ++r) t.row_ptr_[r + 1] += t.row_ptr_[r];
    std::vector<std::int64_t> fill(t.row_ptr_.begin(), t.row_ptr_.end() - 1);
    for (std::int32_t r = 0; r < rows_; ++r) {
        for (auto p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) {
            const auto dst = fill[col_idx_[p]]++;
            t.col_idx_[dst] = r;
            t.values_[dst] = values_[p];
        }
    }
    return t;
}

bool SparseMatrix::is_symmetric() const { return rows_ == cols_ && transpose() == *this; }

SparseMatrix SparseMatrix::restrict_to(std::span<const std::int32_t> keep) const {
    require(rows_ == cols_, "precondition", "restrict_to needs a square matrix");
    const auto k = static_cast<std::int32_t>(keep.size());
    SparseMatrix sub(k, k);
    for (std::int32_t i = 0; i < k; ++i) {
        require(keep[i] >= 0 && keep[i] < rows_ && (i == 0 || keep[i - 1] < keep[i]),
                "precondition", "restrict_to indices must be sorted, unique and in range");
        const auto cols = row_indices(keep[i]);
        const auto vals = row_values(keep[i]);
        // Both lists are sorted: merge-walk instead of a dense old->new map.
        std::size_t a = 0;
        std::int32_t b = 0;
        while (a < cols.size() && b < k) {
            if (cols[a] < keep[b]) {
                ++a;
            } else if (keep[b] < cols[a]) {
                ++b;
            } else {
                sub.col_idx_.push_back(b);
                sub.values_.push_back(vals[a]);
                ++a;
                ++b;
            }
        }
        sub.row_ptr_[i + 1] = static_cast<std::int64_t>(sub.values_.size());
    }
    return sub;
}

Matrix SparseMatrix::to_dense() const {
    Matrix d = Matrix::Zero(rows_, cols_);
    for (std::int32_t r = 0; r < rows_; ++r) {
        for (auto p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) d(r, col_idx_[p]) = values_[p];
    }
    return d;
}

Matrix spmm(const SparseMatrix& a, const Matrix& x) {
    require(a.cols() == x.rows(), "dimension",
            "spmm: A is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                " but X has " + std::to_string(x.rows()) + " rows");
    Matrix y = Matrix::Zero(a.rows(), x.cols());
    const auto& ptr = a.row_ptr();
    const auto& idx = a.col_idx();
    const auto& val = a.values();
    for (std::int32_t r = 0; r < a.rows(); ++r) {
        for (auto p = ptr[r]; p < ptr[r + 1]; ++p) y.row(r) += val[p] * x.row(idx[p]);
    }
    return y;
}

}  // namespace xcg
