#pragma once

#include "s2p/extractor.hpp"

namespace s2p {

/// Scalar loss value and its gradient with respect to one input matrix.
template <typename Scalar>
struct LossResult {
    Scalar value = Scalar(0);
    Mat<Scalar> grad;
};

/// Rows scaled to unit norm. Throws on a zero row (`what` names the caller).
template <typename Derived>
Mat<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& x, const char* what) {
    using Scalar = typename Derived::Scalar;
    Mat<Scalar> out = x;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const Scalar n = out.row(i).norm();
        if (!(n > Scalar(0)))
            throw std::domain_error(std::string(what) + ": zero-norm feature at row " + std::to_string(i));
        out.row(i) /= n;
    }
    return out;
}

/// Chain rule through row-wise L2 normalization: given x and dL/dx_hat, returns dL/dx.
template <typename DX, typename DG>
Mat<typename DX::Scalar> normalize_rows_backward(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DG>& grad_hat) {
    using Scalar = typename DX::Scalar;
    Mat<Scalar> out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Scalar n = x.row(i).norm();
        const RowVec<Scalar> u = x.row(i) / n;
        out.row(i) = (grad_hat.row(i) - grad_hat.row(i).dot(u) * u) / n;
    }
    return out;
}

}  // namespace s2p
