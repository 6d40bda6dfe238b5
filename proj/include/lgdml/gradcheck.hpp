#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace lgdml {

struct GradcheckRow {
    std::string loss;
    int instances = 0;
    long coordinates = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    // Largest |gradient| on entries the loss holds fixed (masked same-class
    // similarities); 0 when the loss has none.
    double max_fixed_entry_grad = 0.0;
    bool has_fixed_entries = false;
};

struct GradcheckReport {
    std::vector<GradcheckRow> rows;
    double max_rel_error = 0.0;
    double step = 0.0;
    std::uint64_t seed = 0;
};

/// Names accepted by gradcheck().
const std::vector<std::string>& gradcheck_losses();

/// Central differences, evaluated in quadruple precision, against the double
/// precision analytic gradient. Relative error per coordinate uses the
/// denominator max(|a|, |b|, 1e-8). An empty `losses` list checks every loss.
GradcheckReport gradcheck(const std::vector<std::string>& losses, std::uint64_t seed, double step = 1e-6,
                          int instances = 20);

void write_gradcheck_report(std::ostream& os, const GradcheckReport& report);

}  // namespace lgdml
