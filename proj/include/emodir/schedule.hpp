#pragma once

#include <vector>

#include "emodir/image.hpp"

namespace emodir {

// Linear beta schedule with cumulative-product alpha_bar. Steps are
// 1-indexed throughout (t in [1, T]); internal storage is 0-indexed.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> beta;       // size T
    std::vector<double> alpha_bar;  // size T, strictly decreasing

    double beta_at(int t) const { return beta[size_t(t - 1)]; }
    double alpha_bar_at(int t) const { return alpha_bar[size_t(t - 1)]; }
};

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end);

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
Image forward_diffuse(const Image& x0, int t, const Image& eps, const NoiseSchedule& sched);

}  // namespace emodir
