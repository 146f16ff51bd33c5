#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "windgrid/common.hpp"
#include "windgrid/rng.hpp"

namespace windgrid {

// ===========================================================================
// Marginal distributions
// ===========================================================================

[[nodiscard]] inline Real normal_cdf(Real x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

[[nodiscard]] inline Real normal_pdf(Real x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

/// Weibull density; 0 for u <= 0.
[[nodiscard]] inline Real weibull_pdf(Real u, Real k, Real lambda) {
    if (u <= 0.0) return 0.0;
    const Real r = u / lambda;
    return (k / lambda) * std::pow(r, k - 1.0) * std::exp(-std::pow(r, k));
}

/// Weibull CDF, F(u) = 1 - exp(-(u/lambda)^k); 0 for u < 0.
[[nodiscard]] inline Real weibull_cdf(Real u, Real k, Real lambda) {
    if (u <= 0.0) return 0.0;
    return -std::expm1(-std::pow(u / lambda, k));
}

/// Weibull quantile, Q(p) = lambda * (-ln(1-p))^(1/k). Requires p in [0, 1).
[[nodiscard]] inline Real weibull_quantile(Real p, Real k, Real lambda) {
    if (p < 0.0 || p >= 1.0)
        throw NumericsError(strfmt("weibull quantile requires p in [0,1), got %g", p));
    if (p == 0.0) return 0.0;
    return lambda * std::pow(-std::log1p(-p), 1.0 / k);
}

[[nodiscard]] inline Real weibull_mean(Real k, Real lambda) {
    return lambda * std::tgamma(1.0 + 1.0 / k);
}

[[nodiscard]] inline Real weibull_var(Real k, Real lambda) {
    const Real m = weibull_mean(k, lambda);
    return lambda * lambda * std::tgamma(1.0 + 2.0 / k) - m * m;
}

/// A marginal speed distribution: enough of the distribution interface for the
/// memoryless transform and for validation statistics.
class Marginal {
public:
    virtual ~Marginal() = default;
    [[nodiscard]] virtual Real cdf(Real u) const = 0;
    [[nodiscard]] virtual Real pdf(Real u) const = 0;
    [[nodiscard]] virtual Real quantile(Real p) const = 0;
    [[nodiscard]] virtual Real mean() const = 0;
    [[nodiscard]] virtual Real var() const = 0;
    [[nodiscard]] virtual std::string name() const = 0;
};

class WeibullMarginal final : public Marginal {
public:
    WeibullMarginal(Real k, Real lambda) : k_(k), lambda_(lambda) {
        if (k <= 0.0 || lambda <= 0.0)
            throw ParseError(strfmt("weibull requires k > 0 and lambda > 0, got k=%g lambda=%g", k, lambda));
    }
    [[nodiscard]] Real cdf(Real u) const override { return weibull_cdf(u, k_, lambda_); }
    [[nodiscard]] Real pdf(Real u) const override { return weibull_pdf(u, k_, lambda_); }
    [[nodiscard]] Real quantile(Real p) const override { return weibull_quantile(p, k_, lambda_); }
    [[nodiscard]] Real mean() const override { return weibull_mean(k_, lambda_); }
    [[nodiscard]] Real var() const override { return weibull_var(k_, lambda_); }
    [[nodiscard]] std::string name() const override { return "weibull"; }
    [[nodiscard]] Real shape() const { return k_; }
    [[nodiscard]] Real scale() const { return lambda_; }

private:
    Real k_;
    Real lambda_;
};

using MarginalFactory =
    std::function<std::shared_ptr<const Marginal>(const std::map<std::string, Real>&)>;

/// Registry of marginal distributions keyed by name. New marginals plug in by
/// registering a factory; "weibull" ships by default (params: k, lambda).
inline std::map<std::string, MarginalFactory>& marginal_registry() {
    static std::map<std::string, MarginalFactory> reg = [] {
        std::map<std::string, MarginalFactory> r;
        r["weibull"] = [](const std::map<std::string, Real>& p) -> std::shared_ptr<const Marginal> {
            const auto k = p.find("k");
            const auto lam = p.find("lambda");
            if (k == p.end() || lam == p.end())
                throw ParseError("weibull marginal requires parameters k and lambda");
            return std::make_shared<WeibullMarginal>(k->second, lam->second);
        };
        return r;
    }();
    return reg;
}

[[nodiscard]] inline std::shared_ptr<const Marginal>
make_marginal(const std::string& name, const std::map<std::string, Real>& params) {
    const auto it = marginal_registry().find(name);
    if (it == marginal_registry().end())
        throw ParseError(strfmt("unknown wind marginal distribution '%s'", name.c_str()));
    return it->second(params);
}

// ===========================================================================
// Ornstein-Uhlenbeck driver and memoryless transform
// ===========================================================================

/// Exact one-step update of d(eta) = -alpha*eta dt + sigma dW over dt, given a
/// standard normal draw. alpha = 0 degenerates to pure Brownian scaling.
[[nodiscard]] inline Real step_ou(Real eta, Real alpha, Real sigma, Real dt, Real normal_draw) {
    if (alpha == 0.0) return eta + sigma * std::sqrt(dt) * normal_draw;
    const Real decay = std::exp(-alpha * dt);
    const Real var = -std::expm1(-2.0 * alpha * dt) / (2.0 * alpha);
    return eta * decay + sigma * std::sqrt(var) * normal_draw;
}

/// Stationary standard deviation of the OU process, sigma / sqrt(2 alpha).
[[nodiscard]] inline Real ou_stationary_std(Real alpha, Real sigma) {
    if (alpha <= 0.0)
        throw NumericsError("OU stationary distribution requires alpha > 0");
    return sigma / std::sqrt(2.0 * alpha);
}

/// Memoryless transform from the OU state to a speed with the given marginal:
/// y = Q(Phi(eta / (sigma/sqrt(2 alpha)))). The normalization uses the
/// source's nominal sigma, so the marginal does not depend on sigma.
[[nodiscard]] inline Real transform_speed(Real eta, Real alpha, Real sigma, const Marginal& marginal) {
    const Real s = ou_stationary_std(alpha, sigma);
    Real p = normal_cdf(eta / s);
    // normal_cdf saturates at 1.0 a hair inside |eta/s| ~ 8.3; keep the
    // quantile argument inside its open domain.
    p = std::clamp(p, 1e-300, 1.0 - 1e-16);
    return marginal.quantile(p);
}

/// d(transform_speed)/d(eta), by the inverse-function rule through the
/// marginal density. Returns 0 where the density underflows (|eta| huge).
[[nodiscard]] inline Real transform_speed_slope(Real eta, Real alpha, Real sigma,
                                                const Marginal& marginal) {
    const Real s = ou_stationary_std(alpha, sigma);
    const Real y = transform_speed(eta, alpha, sigma, marginal);
    const Real fy = marginal.pdf(y);
    if (fy <= 0.0) return 0.0;
    return normal_pdf(eta / s) / (s * fy);
}

/// One stochastic wind speed source.
struct WindSource {
    int bus = 0;                ///< bus of the wind plant this source drives
    Real alpha = 0.2;           ///< OU mean-reversion rate [1/s]
    Real sigma = 0.1;           ///< nominal OU noise intensity
    std::shared_ptr<const Marginal> marginal;
    bool eta0_pinned = false;   ///< case pinned the initial OU state
    Real eta0 = 0.0;

    [[nodiscard]] Real speed(Real eta) const { return transform_speed(eta, alpha, sigma, *marginal); }

    [[nodiscard]] Real speed_slope(Real eta) const {
        return transform_speed_slope(eta, alpha, sigma, *marginal);
    }

    /// Initial OU state: the pinned value, else a stationary draw.
    [[nodiscard]] Real initial_eta(RandomStream& rng) const {
        if (eta0_pinned) return eta0;
        return ou_stationary_std(alpha, sigma) * rng.normal();
    }

    /// Median speed; the deterministic model's constant wind when eta0 = 0.
    [[nodiscard]] Real median_speed() const { return marginal->quantile(0.5); }
};

// ===========================================================================
// Statistics validation
// ===========================================================================

struct WindStatistics {
    Real mean = 0.0;
    Real var = 0.0;
    Real mean_rel_err = 0.0;     ///< vs marginal mean
    Real var_rel_err = 0.0;      ///< vs marginal variance
    Real fitted_alpha = 0.0;     ///< exponential decay rate fitted to the autocorrelation
    Real alpha_rel_err = 0.0;    ///< vs requested alpha
    Real ks_marginal = 0.0;      ///< KS distance between sample and marginal CDF
};

/// Two-sample Kolmogorov-Smirnov distance. Inputs are sorted in place.
[[nodiscard]] inline Real ks_two_sample(std::vector<Real>& a, std::vector<Real>& b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const Real na = static_cast<Real>(a.size());
    const Real nb = static_cast<Real>(b.size());
    size_t i = 0, j = 0;
    Real d = 0.0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j]) ++i; else ++j;
        d = std::max(d, std::abs(static_cast<Real>(i) / na - static_cast<Real>(j) / nb));
    }
    return d;
}

/// One-sample KS distance against a marginal CDF. Input is sorted in place.
[[nodiscard]] inline Real ks_against_marginal(std::vector<Real>& samples, const Marginal& marginal) {
    std::sort(samples.begin(), samples.end());
    const Real n = static_cast<Real>(samples.size());
    Real d = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const Real f = marginal.cdf(samples[i]);
        d = std::max(d, std::abs(f - static_cast<Real>(i) / n));
        d = std::max(d, std::abs(static_cast<Real>(i + 1) / n - f));
    }
    return d;
}

/// Sample a wind-speed series of n points spaced dt apart, starting from the
/// stationary distribution (or the pinned initial state).
[[nodiscard]] inline std::vector<Real>
sample_wind_series(const WindSource& src, std::uint64_t seed, std::uint64_t stream,
                   size_t n, Real dt) {
    RandomStream rng(seed, stream);
    std::vector<Real> y(n);
    Real eta = src.initial_eta(rng);
    for (size_t i = 0; i < n; ++i) {
        y[i] = src.speed(eta);
        eta = step_ou(eta, src.alpha, src.sigma, dt, rng.normal());
    }
    return y;
}

/// Validate the marginal and temporal statistics of a sampled speed series.
/// Requires at least 10^4 samples spanning at least 20 autocorrelation times;
/// shorter inputs are rejected because the estimates would be meaningless.
[[nodiscard]] inline WindStatistics
validate_statistics(const std::vector<Real>& series, Real dt, const WindSource& src) {
    const size_t n = series.size();
    if (n < 10000)
        throw NumericsError(strfmt("statistics validation needs >= 10000 samples, got %zu", n));
    const Real span = static_cast<Real>(n - 1) * dt;
    if (span * src.alpha < 20.0)
        throw NumericsError(strfmt(
            "statistics validation needs a span of at least 20/alpha = %g s, got %g s",
            20.0 / src.alpha, span));

    WindStatistics out;
    Real sum = 0.0;
    for (Real v : series) sum += v;
    out.mean = sum / static_cast<Real>(n);
    Real ss = 0.0;
    for (Real v : series) ss += (v - out.mean) * (v - out.mean);
    out.var = ss / static_cast<Real>(n - 1);

    const Real m_ref = src.marginal->mean();
    const Real v_ref = src.marginal->var();
    out.mean_rel_err = std::abs(out.mean - m_ref) / std::abs(m_ref);
    out.var_rel_err = std::abs(out.var - v_ref) / std::abs(v_ref);

    // Autocorrelation out to ~3 decay times, fitted as log rho = -alpha * lag
    // by least squares through the origin, using only clearly positive rho.
    const size_t max_lag = std::min(n / 10, static_cast<size_t>(3.0 / (src.alpha * dt)) + 1);
    Real sxx = 0.0, sxy = 0.0;
    for (size_t lag = 1; lag <= max_lag; ++lag) {
        Real acc = 0.0;
        for (size_t i = 0; i + lag < n; ++i)
            acc += (series[i] - out.mean) * (series[i + lag] - out.mean);
        const Real rho = acc / ss;
        if (rho < 0.05) break;
        const Real tau = static_cast<Real>(lag) * dt;
        sxx += tau * tau;
        sxy += tau * std::log(rho);
    }
    out.fitted_alpha = sxx > 0.0 ? -sxy / sxx : 0.0;
    out.alpha_rel_err = std::abs(out.fitted_alpha - src.alpha) / src.alpha;

    std::vector<Real> sorted = series;
    out.ks_marginal = ks_against_marginal(sorted, *src.marginal);
    return out;
}

} // namespace windgrid
