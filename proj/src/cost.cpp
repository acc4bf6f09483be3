#include "pdro/cost.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "pdro/errors.hpp"

namespace pdro {

namespace {

struct WindowStats {
    double mu_x, mu_y, var_x, var_y, cov;
};

// Weighted first and second moments over the window anchored at (r0, c0).
WindowStats window_stats(const Image& x, const Image& y, std::size_t r0, std::size_t c0,
                         std::size_t size, const double* weights) {
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) {
            const double w = weights[r * size + c];
            const double a = x(r0 + r, c0 + c), b = y(r0 + r, c0 + c);
            sx += w * a;
            sy += w * b;
            sxx += w * a * a;
            syy += w * b * b;
            sxy += w * a * b;
        }
    return {sx, sy, sxx - sx * sx, syy - sy * sy, sxy - sx * sy};
}

// Uniform weights 1/n over every pixel.
WindowStats global_stats(const Image& x, const Image& y) {
    const double w = 1.0 / static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += w * x[i];
        sy += w * y[i];
        sxx += w * x[i] * x[i];
        syy += w * y[i] * y[i];
        sxy += w * x[i] * y[i];
    }
    return {sx, sy, sxx - sx * sx, syy - sy * sy, sxy - sx * sy};
}

double index_from(const WindowStats& s, double c1, double c2) {
    const double a1 = 2 * s.mu_x * s.mu_y + c1, a2 = 2 * s.cov + c2;
    const double b1 = s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1, b2 = s.var_x + s.var_y + c2;
    return a1 * a2 / (b1 * b2);
}

// Partial derivatives of the index with respect to (mu_y, var_y, cov).
struct IndexPartials {
    double d_mu_y, d_var_y, d_cov;
};

IndexPartials partials_from(const WindowStats& s, double c1, double c2) {
    const double a1 = 2 * s.mu_x * s.mu_y + c1, a2 = 2 * s.cov + c2;
    const double b1 = s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1, b2 = s.var_x + s.var_y + c2;
    const double denom = b1 * b2;
    const double value = a1 * a2 / denom;
    return {2 * s.mu_x * a2 / denom - value * 2 * s.mu_y / b1, -value / b2, 2 * a1 / denom};
}

void require_same_shape(const Image& x, const Image& y, const char* what) {
    if (!x.same_shape(y)) throw DimensionError(std::string(what) + ": shape mismatch");
}

void require_window_fits(const Image& x, const SsimConfig& cfg) {
    const auto ws = static_cast<std::size_t>(cfg.window_size);
    if (x.height() < ws || x.width() < ws)
        throw DimensionError("image " + std::to_string(x.height()) + "x" +
                             std::to_string(x.width()) + " is smaller than the SSIM window");
}

} // namespace

void SsimConfig::validate() const {
    if (!(k1 > 0) || !(k2 > 0) || !(dynamic_range > 0))
        throw ParameterError("SSIM constants K1, K2 and L must be positive");
    if (mode == SsimMode::windowed && (window_size < 1 || window_size % 2 == 0 || !(window_sigma > 0)))
        throw ParameterError("SSIM window must be a positive odd size with positive sigma");
}

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size * size));
    const double center = (size - 1) / 2.0;
    double total = 0;
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const double dr = r - center, dc = c - center;
            total += w[r * size + c] = std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
        }
    for (double& v : w) v /= total;
    return w;
}

double ssim(const Image& x, const Image& y, const SsimConfig& cfg) {
    require_same_shape(x, y, "ssim");
    cfg.validate();
    const double c1 = cfg.c1(), c2 = cfg.c2();
    if (cfg.mode == SsimMode::global) return index_from(global_stats(x, y), c1, c2);
    require_window_fits(x, cfg);
    const auto ws = static_cast<std::size_t>(cfg.window_size);
    const auto window = gaussian_window(cfg.window_size, cfg.window_sigma);
    double total = 0;
    std::size_t count = 0;
    for (std::size_t r0 = 0; r0 + ws <= x.height(); ++r0)
        for (std::size_t c0 = 0; c0 + ws <= x.width(); ++c0, ++count)
            total += index_from(window_stats(x, y, r0, c0, ws, window.data()), c1, c2);
    return total / static_cast<double>(count);
}

std::vector<double> ssim_gradient(const Image& x, const Image& y, const SsimConfig& cfg) {
    require_same_shape(x, y, "ssim_gradient");
    cfg.validate();
    const double c1 = cfg.c1(), c2 = cfg.c2();
    std::vector<double> grad(x.size(), 0.0);
    if (cfg.mode == SsimMode::global) {
        const double w = 1.0 / static_cast<double>(x.size());
        const auto s = global_stats(x, y);
        const auto p = partials_from(s, c1, c2);
        for (std::size_t i = 0; i < x.size(); ++i)
            grad[i] = w * (p.d_mu_y + 2 * p.d_var_y * (y[i] - s.mu_y) + p.d_cov * (x[i] - s.mu_x));
        return grad;
    }
    require_window_fits(x, cfg);
    const auto ws = static_cast<std::size_t>(cfg.window_size);
    const auto window = gaussian_window(cfg.window_size, cfg.window_sigma);
    const std::size_t rows = x.height() - ws + 1, cols = x.width() - ws + 1;
    const double inv_count = 1.0 / static_cast<double>(rows * cols);
    const std::size_t width = x.width();
    for (std::size_t r0 = 0; r0 < rows; ++r0)
        for (std::size_t c0 = 0; c0 < cols; ++c0) {
            const auto s = window_stats(x, y, r0, c0, ws, window.data());
            const auto p = partials_from(s, c1, c2);
            for (std::size_t r = 0; r < ws; ++r)
                for (std::size_t c = 0; c < ws; ++c) {
                    const std::size_t j = (r0 + r) * width + c0 + c;
                    grad[j] += inv_count * window[r * ws + c] *
                               (p.d_mu_y + 2 * p.d_var_y * (y[j] - s.mu_y) + p.d_cov * (x[j] - s.mu_x));
                }
        }
    return grad;
}

SsimCost::SsimCost(SsimConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::string SsimCost::name() const {
    return cfg_.mode == SsimMode::global ? "ssim-global" : "ssim-windowed";
}

double SsimCost::value(const Image& x, const Image& y) const { return 1.0 - ssim(x, y, cfg_); }

std::vector<double> SsimCost::gradient(const Image& x, const Image& y) const {
    auto g = ssim_gradient(x, y, cfg_);
    for (double& v : g) v = -v;
    return g;
}

double L2Cost::value(const Image& x, const Image& y) const {
    require_same_shape(x, y, "l2 cost");
    double acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (y[i] - x[i]) * (y[i] - x[i]);
    return acc;
}

std::vector<double> L2Cost::gradient(const Image& x, const Image& y) const {
    require_same_shape(x, y, "l2 cost");
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = 2 * (y[i] - x[i]);
    return g;
}

CostPtr make_cost(const std::string& name) {
    if (name == "ssim-global") return std::make_shared<SsimCost>(SsimConfig::global());
    if (name == "ssim-windowed") return std::make_shared<SsimCost>(SsimConfig::windowed());
    if (name == "l2") return std::make_shared<L2Cost>();
    throw ParameterError("unknown cost '" + name + "' (expected ssim-global, ssim-windowed or l2)");
}

CostHessian cost_hessian_at_base(const CostFunction& cost, const Image& x0, HessianPolicy policy) {
    if (policy == HessianPolicy::global_ssim_only) {
        const auto* ssim_cost = dynamic_cast<const SsimCost*>(&cost);
        if (ssim_cost == nullptr || ssim_cost->config().mode != SsimMode::global)
            throw CapabilityError("Hessian at the base point requires the ssim-global cost, got " +
                                  cost.name());
    }
    const std::size_t n = x0.size();
    if (n > kHessianPixelBudget)
        throw SizeError("Hessian needs " + std::to_string(n) + " pixels, budget is " +
                        std::to_string(kHessianPixelBudget));

    constexpr double h = 1e-4;
    Eigen::MatrixXd hess(n, n);
    Image probe = x0;
    for (std::size_t j = 0; j < n; ++j) {
        probe[j] = x0[j] + h;
        const auto plus = cost.gradient(x0, probe);
        probe[j] = x0[j] - h;
        const auto minus = cost.gradient(x0, probe);
        probe[j] = x0[j];
        for (std::size_t i = 0; i < n; ++i) hess(i, j) = (plus[i] - minus[i]) / (2 * h);
    }
    Eigen::MatrixXd sym = 0.5 * (hess + hess.transpose());
    return {std::move(sym), x0};
}

void write_hessian_csv(const CostHessian& h, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    char buf[32];
    for (Eigen::Index i = 0; i < h.matrix.rows(); ++i) {
        for (Eigen::Index j = 0; j < h.matrix.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.9g", h.matrix(i, j));
            out << (j ? "," : "") << buf;
        }
        out << '\n';
    }
}

} // namespace pdro
