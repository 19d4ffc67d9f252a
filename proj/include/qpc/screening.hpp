#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qpc/dataset.hpp"
#include "qpc/qpc.hpp"
#include "qpc/quantile.hpp"

namespace qpc {

enum class Algorithm { QPCS, QPCFR, L1QR };

Algorithm algorithm_from_string(const std::string& name);
std::string to_string(Algorithm a);

struct ScreenConfig {
    double tau = 0.5;
    int d_star = 0;  // augmentation switch point (QPCS only)
    int m_cap = 0;   // confounding-set size cap
    int d_max = 0;   // trace length bound and EBIC search bound
    bool standardize = false;
    // Reproduces the degenerate manuscript reading where confounders are drawn
    // from the already-selected set (QPCS then collapses onto QPCFR).
    bool literal_confounding = false;

    // d_star = floor(sqrt(n/ln n)), m_cap likewise, d_max = floor(n/ln n).
    static ScreenConfig defaults_for(Eigen::Index n, double tau);
    void validate(Eigen::Index n) const;
};

struct SelectionStep {
    int index = -1;                // selected column
    double abs_qpc = 0.0;          // winning |QPC|
    std::vector<int> confounders;  // confounding set behind the winner's score (QPCS only)
    int skipped = 0;               // candidates that failed at this step
};

struct SelectionTrace {
    std::vector<SelectionStep> steps;        // nested prefixes, in selection order
    std::vector<double> ebic;                // ebic[d-1] for prefix length d
    int chosen_d = 0;                        // argmin of ebic, ties to the smaller d
    QrFit final_fit;                         // quantile refit on the chosen prefix
    bool stalled = false;                    // every remaining candidate failed at some step
    std::vector<int> degenerate_candidates;  // constant columns excluded up front

    std::vector<int> selected() const;  // all selected indices, in order
    std::vector<int> chosen() const;    // first chosen_d indices
};

// The m pool columns k (k != j, k not in `excluded`) with the largest
// |pearson_corr(x_j, x_k)|; ties broken toward the smaller index. Constant pool
// columns are skipped; a constant x_j throws DegenerateColumn.
std::vector<int> confounding_set(const Dataset& data, int j, const std::vector<int>& excluded,
                                 int m);

// EBIC for a prefix of size d: ln(loss) + d * (ln n / 2n) * ln d.
// Throws NonPositiveLoss when loss <= 1e-300.
double ebic(double loss, int d, Eigen::Index n);

SelectionTrace qpcs_run(const Dataset& data, const ScreenConfig& cfg);
SelectionTrace qpcfr_run(const Dataset& data, const ScreenConfig& cfg);

struct TwoStepFit {
    std::vector<int> selected;  // chosen prefix, selection order
    QrFit fit;                  // quantile refit on those columns
};

TwoStepFit select_two_step(const Dataset& data, const SelectionTrace& trace, QuantileLevel tau);

}  // namespace qpc
