#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace xcg {

// Row-major: node feature matrices are accessed one node (row) at a time.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Triplet {
    std::int32_t row;
    std::int32_t col;
    double value;
};

/// Compressed-row sparse matrix. Column indices are sorted and unique
/// within each row and no explicit zeros are stored.
class SparseMatrix {
public:
    SparseMatrix() = default;
    SparseMatrix(std::int32_t rows, std::int32_t cols);

    /// Duplicate (row, col) entries are summed; entries that sum to zero are dropped.
    static SparseMatrix from_triplets(std::int32_t rows, std::int32_t cols,
                                      std::vector<Triplet> triplets);

    /// Builds from raw CSR arrays and validates every structural invariant.
    static SparseMatrix from_csr(std::int32_t rows, std::int32_t cols,
                                 std::vector<std::int64_t> row_ptr,
                                 std::vector<std::int32_t> col_idx,
                                 std::vector<double> values);

    static SparseMatrix identity(std::int32_t n);

    std::int32_t rows() const noexcept { return rows_; }
    std::int32_t cols() const noexcept { return cols_; }
    std::int64_t nnz() const noexcept { return static_cast<std::int64_t>(values_.size()); }

    std::span<const std::int32_t> row_indices(std::int32_t r) const {
        return {col_idx_.data() + row_ptr_[r], col_idx_.data() + row_ptr_[r + 1]};
    }
    std::span<const double> row_values(std::int32_t r) const {
        return {values_.data() + row_ptr_[r], values_.data() + row_ptr_[r + 1]};
    }

    const std::vector<std::int64_t>& row_ptr() const noexcept { return row_ptr_; }
    const std::vector<std::int32_t>& col_idx() const noexcept { return col_idx_; }
    const std::vector<double>& values() const noexcept { return values_; }

    double coeff(std::int32_t r, std::int32_t c) const;
    SparseMatrix transpose() const;
    bool is_symmetric() const;

    /// Principal submatrix on `keep` (sorted ascending, unique). Row/column
    /// i of the result corresponds to keep[i].
    SparseMatrix restrict_to(std::span<const std::int32_t> keep) const;

    Matrix to_dense() const;

    friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

private:
    std::int32_t rows_ = 0;
    std::int32_t cols_ = 0;
    std::vector<std::int64_t> row_ptr_{0};
    std::vector<std::int32_t> col_idx_;
    std::vector<double> values_;
};

/// Y = A * X. Rows of A without stored entries produce zero rows.
Matrix spmm(const SparseMatrix& a, const Matrix& x);

}  // namespace xcg
