/*
 * Copyright 2026 The pgpe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#ifndef PGPE_OPTIMIZE_HPP_
#define PGPE_OPTIMIZE_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "pgpe/common.hpp"

namespace pgpe {

struct CgOptions {
    int max_iterations = 200;
    double gradient_tolerance = 1e-5;
    /// Stop when an accepted step lowers the objective by less than this
    /// fraction of |f|. Zero disables the test.
    double relative_tolerance = 0.0;
    /// Largest change of any coordinate in the first trial of a line search.
    double max_step = 3.0;
    int max_line_evals = 20;
    double armijo = 1e-4;     ///< sufficient decrease
    double curvature = 0.1;   ///< strong Wolfe curvature
};

template <typename Scalar>
struct CgResult {
    Vec<Scalar> x;
    Scalar value{};
    Vec<Scalar> gradient;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    std::vector<Scalar> trace;  ///< objective after each accepted iteration, starting point first
};

/// Box-constrained nonlinear conjugate gradients (Polak-Ribiere+, restarts
/// every n iterations or on loss of descent). The line search brackets a
/// step satisfying the strong Wolfe conditions and refines it by safeguarded
/// cubic interpolation; steps never leave the box.
///
/// `objective(x, grad)` returns f(x) and writes the gradient. It may throw
/// NumericError; during the line search that counts as a rejected trial.
template <typename Scalar, typename Objective>
CgResult<Scalar> minimize_cg(Objective&& objective, Vec<Scalar> x0, const CgOptions& opt,
                             const Vec<Scalar>& lower, const Vec<Scalar>& upper)
{
    const Index n = x0.size();
    if (lower.size() != n || upper.size() != n) throw std::invalid_argument("minimize_cg: bound size mismatch");

    auto project = [&](const Vec<Scalar>& x) -> Vec<Scalar> { return x.cwiseMax(lower).cwiseMin(upper); };
    auto projected_gradient = [&](const Vec<Scalar>& x, const Vec<Scalar>& g) {
        Vec<Scalar> pg = g;
        for (Index i = 0; i < n; ++i)
            if ((x(i) <= lower(i) && g(i) > 0) || (x(i) >= upper(i) && g(i) < 0)) pg(i) = 0;
        return pg;
    };

    CgResult<Scalar> res;
    res.x = project(x0);
    res.gradient.resize(n);
    res.value = objective(res.x, res.gradient);
    res.evaluations = 1;
    if (!std::isfinite(static_cast<double>(res.value)) || !res.gradient.allFinite())
        throw NumericError("minimize_cg: objective not finite at the starting point");
    res.trace.push_back(res.value);

    struct Trial {
        Scalar a = 0, f = 0, dphi = 0;
        Vec<Scalar> x, g;
        bool valid = false;
    };

    Vec<Scalar> pg = projected_gradient(res.x, res.gradient);
    Vec<Scalar> d = -pg;
    bool steepest = true;
    Scalar prev_step = 0;
    Scalar prev_slope = 0;
    int since_restart = 0;

    while (res.iterations < opt.max_iterations) {
        if (pg.norm() < opt.gradient_tolerance) {
            res.converged = true;
            break;
        }
        // drop components that would push through an active bound
        for (Index i = 0; i < n; ++i)
            if ((res.x(i) <= lower(i) && d(i) < 0) || (res.x(i) >= upper(i) && d(i) > 0)) d(i) = 0;
        Scalar slope = res.gradient.dot(d);
        if (!(slope < 0)) {
            d = -pg;
            steepest = true;
            slope = res.gradient.dot(d);
            if (!(slope < 0)) {
                res.converged = true;
                break;
            }
        }

        Scalar a_max = std::numeric_limits<Scalar>::infinity();
        for (Index i = 0; i < n; ++i) {
            if (d(i) > 0) a_max = std::min(a_max, (upper(i) - res.x(i)) / d(i));
            if (d(i) < 0) a_max = std::min(a_max, (lower(i) - res.x(i)) / d(i));
        }
        Scalar a = (steepest || prev_step <= 0) ? Scalar(1) / std::max(Scalar(1), d.norm())
                                                : prev_step * prev_slope / slope;
        const Scalar dmax = d.cwiseAbs().maxCoeff();
        a = std::min({a, Scalar(opt.max_step) / dmax, a_max});

        const Scalar f0 = res.value;
        int evals = 0;
        auto evaluate = [&](Scalar step, Trial& t) {
            t.a = step;
            t.x = project(res.x + step * d);
            t.g.resize(n);
            t.valid = true;
            try {
                t.f = objective(t.x, t.g);
            } catch (const NumericError&) {
                t.valid = false;
            }
            ++evals;
            ++res.evaluations;
            t.valid = t.valid && std::isfinite(static_cast<double>(t.f)) && t.g.allFinite();
            if (t.valid) t.dphi = t.g.dot(d);
        };
        auto sufficient = [&](const Trial& t) { return t.valid && t.f <= f0 + Scalar(opt.armijo) * t.a * slope; };
        auto flat = [&](const Trial& t) { return std::abs(t.dphi) <= -Scalar(opt.curvature) * slope; };

        Trial prev{Scalar(0), f0, slope, res.x, res.gradient, true};
        Trial cur, lo, hi;
        std::optional<Trial> best, accepted;
        bool bracketed = false;
        auto consider = [&](const Trial& t) {
            if (sufficient(t) && (!best || t.f < best->f)) best = t;
        };

        while (evals < opt.max_line_evals) {
            evaluate(a, cur);
            consider(cur);
            if (!sufficient(cur) || (prev.a > 0 && cur.f >= prev.f)) {
                lo = prev;
                hi = cur;
                bracketed = true;
                break;
            }
            if (flat(cur) || a >= a_max) {
                accepted = cur;
                break;
            }
            if (cur.dphi >= 0) {
                lo = cur;
                hi = prev;
                bracketed = true;
                break;
            }
            prev = cur;
            a = std::min(a_max, Scalar(4) * a);
        }

        while (bracketed && !accepted && evals < opt.max_line_evals) {
            const Scalar left = std::min(lo.a, hi.a), right = std::max(lo.a, hi.a);
            const Scalar width = right - left;
            if (width <= std::numeric_limits<Scalar>::epsilon() * std::max(Scalar(1), right)) break;
            Scalar aj = (lo.a + hi.a) / 2;
            if (hi.valid) {
                const Scalar d1 = lo.dphi + hi.dphi - 3 * (lo.f - hi.f) / (lo.a - hi.a);
                const Scalar d2sq = d1 * d1 - lo.dphi * hi.dphi;
                if (d2sq >= 0) {
                    const Scalar d2 = std::copysign(std::sqrt(d2sq), hi.a - lo.a);
                    const Scalar c = hi.a - (hi.a - lo.a) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2 * d2);
                    if (std::isfinite(static_cast<double>(c))) aj = c;
                }
            }
            if (!(aj >= left + width / 10 && aj <= right - width / 10)) aj = (lo.a + hi.a) / 2;
            evaluate(aj, cur);
            consider(cur);
            if (!sufficient(cur) || cur.f >= lo.f) {
                hi = cur;
            } else {
                if (flat(cur)) {
                    accepted = cur;
                    break;
                }
                if (cur.dphi * (hi.a - lo.a) >= 0) hi = lo;
                lo = cur;
            }
        }
        if (!accepted && best) accepted = best;

        if (!accepted) {
            if (steepest) break;  // no progress even along -g
            d = -pg;
            steepest = true;
            since_restart = 0;
            continue;
        }

        const Scalar decrease = res.value - accepted->f;
        const Vec<Scalar> pg_new = projected_gradient(accepted->x, accepted->g);
        Scalar beta = pg.squaredNorm() > 0 ? pg_new.dot(pg_new - pg) / pg.squaredNorm() : Scalar(0);
        beta = std::max(beta, Scalar(0));
        if (++since_restart >= n) {
            beta = 0;
            since_restart = 0;
        }

        prev_step = accepted->a;
        prev_slope = slope;
        res.x = accepted->x;
        res.value = accepted->f;
        res.gradient = accepted->g;
        pg = pg_new;
        d = -pg + beta * d;
        steepest = (beta == 0);
        ++res.iterations;
        res.trace.push_back(res.value);

        if (opt.relative_tolerance > 0 &&
            decrease <= Scalar(opt.relative_tolerance) * std::max(Scalar(1), std::abs(res.value))) {
            res.converged = true;
            break;
        }
    }
    if (!res.converged && pg.norm() < opt.gradient_tolerance) res.converged = true;
    return res;
}

} // namespace pgpe

#endif // PGPE_OPTIMIZE_HPP_
