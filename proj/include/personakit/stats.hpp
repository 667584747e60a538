#pragma once

#include <cstddef>
#include <span>

namespace personakit::stats {

struct Summary {
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation (n - 1); 0 when n < 2
};

Summary summarize(std::span<const double> xs);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
    Summary a;
    Summary b;
};

// Two-sided p-value of Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

// Welch's unequal-variance t-test. Both samples need at least two values (InsufficientData).
// Zero variance on both sides gives t = 0, p = 1 for equal means and t = +-inf, p = 0 otherwise.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace personakit::stats
