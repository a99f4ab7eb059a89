#include "emodir/schedule.hpp"

#include <cmath>

#include "emodir/errors.hpp"

namespace emodir {

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw InvalidInput("make_schedule: steps must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw InvalidInput("make_schedule: need 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.steps = steps;
    s.beta.resize(size_t(steps));
    s.alpha_bar.resize(size_t(steps));
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double frac = steps == 1 ? 0.0 : double(t) / double(steps - 1);
        s.beta[size_t(t)] = beta_start + (beta_end - beta_start) * frac;
        prod *= 1.0 - s.beta[size_t(t)];
        s.alpha_bar[size_t(t)] = prod;
    }
    return s;
}

Image forward_diffuse(const Image& x0, int t, const Image& eps, const NoiseSchedule& sched) {
    if (!x0.same_shape(eps) || x0.rgb.size() != eps.rgb.size())
        throw InvalidInput("forward_diffuse: noise shape mismatch");
    if (t < 1 || t > sched.steps) throw InvalidInput("forward_diffuse: t out of schedule range");
    const double ab = sched.alpha_bar_at(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Image out(x0.width, x0.height);
    for (size_t i = 0; i < x0.rgb.size(); ++i) out.rgb[i] = a * x0.rgb[i] + b * eps.rgb[i];
    return out;
}

}  // namespace emodir
