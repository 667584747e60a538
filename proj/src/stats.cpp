#include "personakit/stats.hpp"

#include <cmath>
#include <limits>

#include <boost/math/special_functions/beta.hpp>
#include <fmt/format.h>

#include "personakit/error.hpp"

namespace personakit::stats {

Summary summarize(std::span<const double> xs) {
    Summary s;
    s.n = xs.size();
    if (s.n == 0) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(s.n);
    if (s.n < 2) return s;
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    return s;
}

double student_t_two_sided_p(double t, double df) {
    if (std::isnan(t) || !(df > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    if (std::isinf(t)) return 0.0;
    if (t == 0.0) return 1.0;
    return boost::math::ibeta(df / 2.0, 0.5, df / (df + t * t));
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2)
        throw Error(ErrorCode::InsufficientData,
                    fmt::format("Welch test needs two values per sample, got {} and {}", a.size(), b.size()));
    WelchResult r;
    r.a = summarize(a);
    r.b = summarize(b);
    const double na = static_cast<double>(r.a.n);
    const double nb = static_cast<double>(r.b.n);
    const double va = r.a.sd * r.a.sd / na;
    const double vb = r.b.sd * r.b.sd / nb;
    const double se2 = va + vb;
    if (se2 == 0.0) {
        r.df = na + nb - 2.0;
        if (r.a.mean == r.b.mean) {
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = r.a.mean > r.b.mean ? std::numeric_limits<double>::infinity()
                                      : -std::numeric_limits<double>::infinity();
            r.p = 0.0;
        }
        return r;
    }
    r.t = (r.a.mean - r.b.mean) / std::sqrt(se2);
    r.df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    r.p = student_t_two_sided_p(r.t, r.df);
    return r;
}

}  // namespace personakit::stats
