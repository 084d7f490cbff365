#pragma once

// Block-Hankel lifting of k-space and its rank-truncating projection.
//
// Column p of the lifted matrix is the a x b patch whose top-left corner is
// (p % (H-a+1), p / (H-a+1)); within a column the patch is vectorised
// column-major (entry dr + dc*a). The pseudo-inverse averages every matrix
// entry that maps back to the same k-space index.

#include <algorithm>
#include <cstddef>
#include <string>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "cmdm/error.hpp"
#include "cmdm/grid.hpp"

namespace cmdm {

struct HankelWindow {
    std::size_t rows = 6;
    std::size_t cols = 6;
    bool operator==(const HankelWindow&) const = default;
};

inline void check_window(const ComplexGrid& k, HankelWindow w) {
    require(w.rows > 0 && w.cols > 0, "Hankel window must be positive");
    if (w.rows > k.rows() || w.cols > k.cols())
        throw UsageError("Hankel window " + std::to_string(w.rows) + "x" + std::to_string(w.cols) + " exceeds grid " +
                         std::to_string(k.rows()) + "x" + std::to_string(k.cols()));
}

inline Eigen::MatrixXcd hankel_lift(const ComplexGrid& k, HankelWindow w) {
    check_window(k, w);
    const std::size_t pr = k.rows() - w.rows + 1, pc = k.cols() - w.cols + 1;
    Eigen::MatrixXcd L(Eigen::Index(w.rows * w.cols), Eigen::Index(pr * pc));
    for (std::size_t qc = 0; qc < pc; ++qc)
        for (std::size_t qr = 0; qr < pr; ++qr) {
            const auto col = Eigen::Index(qr + qc * pr);
            for (std::size_t dc = 0; dc < w.cols; ++dc)
                for (std::size_t dr = 0; dr < w.rows; ++dr) L(Eigen::Index(dr + dc * w.rows), col) = k(qr + dr, qc + dc);
        }
    return L;
}

/// Adjoint-average back to a rows x cols grid.
inline ComplexGrid hankel_pinv(const Eigen::MatrixXcd& L, std::size_t rows, std::size_t cols, HankelWindow w) {
    const std::size_t pr = rows - w.rows + 1, pc = cols - w.cols + 1;
    if (std::size_t(L.rows()) != w.rows * w.cols || std::size_t(L.cols()) != pr * pc)
        throw UsageError("hankel_pinv: matrix shape does not match grid and window");
    ComplexGrid out(rows, cols);
    Grid<double> count(rows, cols, 0.0);
    for (std::size_t qc = 0; qc < pc; ++qc)
        for (std::size_t qr = 0; qr < pr; ++qr) {
            const auto col = Eigen::Index(qr + qc * pr);
            for (std::size_t dc = 0; dc < w.cols; ++dc)
                for (std::size_t dr = 0; dr < w.rows; ++dr) {
                    out(qr + dr, qc + dc) += L(Eigen::Index(dr + dc * w.rows), col);
                    count(qr + dr, qc + dc) += 1.0;
                }
        }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= count[i];
    return out;
}

inline Eigen::VectorXd hankel_singular_values(const ComplexGrid& k, HankelWindow w) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(hankel_lift(k, w));
    return svd.singularValues();
}

/// Keeps the `rank` largest singular values of the lift and maps back.
inline ComplexGrid hankel_project(const ComplexGrid& k, HankelWindow w, std::size_t rank) {
    require(rank >= 1, "Hankel rank must be at least 1");
    const Eigen::MatrixXcd L = hankel_lift(k, w);
    if (!L.allFinite()) throw NumericalError("Hankel lift contains non-finite values");
    if (rank >= std::size_t(std::min(L.rows(), L.cols()))) return hankel_pinv(L, k.rows(), k.cols(), w);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(L, Eigen::ComputeThinU);
    if (svd.info() != Eigen::Success) throw NumericalError("SVD of the Hankel matrix failed");
    const Eigen::MatrixXcd U = svd.matrixU().leftCols(Eigen::Index(rank));
    const Eigen::MatrixXcd low = U * (U.adjoint() * L);
    if (!low.allFinite()) throw NumericalError("Hankel projection produced non-finite values");
    return hankel_pinv(low, k.rows(), k.cols(), w);
}

} // namespace cmdm
