#include "pdro/attack.hpp"

#include <cmath>
#include <numeric>

#include "pdro/errors.hpp"
#include "pdro/parallel.hpp"

namespace pdro {

namespace {

double l2_norm(const std::vector<double>& v) {
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

void check_per_image(const AttackConfig& cfg) {
    if (!(cfg.epsilon >= 0) || !std::isfinite(cfg.epsilon))
        throw ParameterError("attack step size must be finite and non-negative");
    if (cfg.max_iterations < 0) throw ParameterError("attack iteration count must be non-negative");
    if (!cfg.cost) throw ParameterError("attack needs a cost function");
}

AttackResult finish(const Model& m, const LabeledExample& ex, Image x, int iterations) {
    const auto logits = forward_logits(m, x);
    AttackResult r;
    r.success = argmax(logits) != ex.label;
    r.margin = logit_margin(logits, ex.label);
    r.iterations_used = iterations;
    r.distances = distances_between(ex.image, x);
    r.adversarial = std::move(x);
    return r;
}

// x0 + eps * direction / ||direction||, clamped.
Image normalized_step(const Image& x0, const std::vector<double>& direction, double epsilon) {
    const double norm = l2_norm(direction);
    Image x = x0;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += epsilon * direction[i] / norm;
    validate_in_place(x);
    return x;
}

} // namespace

std::string to_string(AttackMethod method) {
    switch (method) {
    case AttackMethod::ssim_one_step: return "ssim-onestep";
    case AttackMethod::pgd_one_step: return "pgd-onestep";
    case AttackMethod::pgd_iterative: return "pgd";
    case AttackMethod::perceptual: return "perceptual";
    }
    return "unknown";
}

AttackMethod parse_attack_method(const std::string& name) {
    if (name == "ssim-onestep") return AttackMethod::ssim_one_step;
    if (name == "pgd-onestep") return AttackMethod::pgd_one_step;
    if (name == "pgd") return AttackMethod::pgd_iterative;
    if (name == "perceptual") return AttackMethod::perceptual;
    throw ParameterError("unknown attack method '" + name +
                         "' (expected ssim-onestep, pgd-onestep, pgd or perceptual)");
}

void AttackConfig::validate() const {
    if (!(epsilon > 0) || !std::isfinite(epsilon)) throw ParameterError("epsilon must be positive");
    if (max_iterations < 1) throw ParameterError("iteration count must be at least 1");
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw ParameterError("lambda must be non-negative");
    if (!(confidence >= 0) || !std::isfinite(confidence))
        throw ParameterError("confidence must be non-negative");
    if (!(hessian_ridge >= 0)) throw ParameterError("Hessian ridge must be non-negative");
    if (!cost) throw ParameterError("attack needs a cost function");
    if (method == AttackMethod::ssim_one_step && hessian_policy == HessianPolicy::global_ssim_only &&
        cost->name() != "ssim-global")
        throw CapabilityError("method " + to_string(method) + " cannot use cost " + cost->name() +
                              " (it needs the Hessian of ssim-global)");
}

Distances distances_between(const Image& original, const Image& adversarial) {
    Distances d;
    d.l1 = lp_distance(original, adversarial, Norm::l1);
    d.l2 = lp_distance(original, adversarial, Norm::l2);
    d.linf = lp_distance(original, adversarial, Norm::linf);
    const auto fits = [&] {
        const auto ws = static_cast<std::size_t>(SsimConfig{}.window_size);
        return original.height() >= ws && original.width() >= ws;
    }();
    d.one_minus_ssim =
        1.0 - ssim(original, adversarial, fits ? SsimConfig::windowed() : SsimConfig::global());
    return d;
}

AttackResult ssim_one_step_attack(const Model& m, const LabeledExample& ex, const AttackConfig& cfg) {
    check_per_image(cfg);
    const auto grad = input_gradient(m, ex.image, ex.label);
    if (l2_norm(grad) == 0.0) throw DegenerateGradientError("loss gradient is zero at x0");

    auto hess = cost_hessian_at_base(*cfg.cost, ex.image, cfg.hessian_policy).matrix;
    const auto n = hess.rows();
    const double ridge = cfg.hessian_ridge * hess.trace() / static_cast<double>(n);
    hess.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(hess);
    if (llt.info() != Eigen::Success)
        throw NumericError("cost Hessian is not positive definite after regularization");
    const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(grad.data(), n);
    const Eigen::VectorXd delta = llt.solve(rhs);
    if (!delta.allFinite() || delta.norm() == 0.0)
        throw NumericError("Hessian solve produced a degenerate direction");
    const std::vector<double> direction(delta.data(), delta.data() + n);
    return finish(m, ex, normalized_step(ex.image, direction, cfg.epsilon), 1);
}

AttackResult pgd_one_step_attack(const Model& m, const LabeledExample& ex, const AttackConfig& cfg) {
    check_per_image(cfg);
    const auto grad = input_gradient(m, ex.image, ex.label);
    if (l2_norm(grad) == 0.0) throw DegenerateGradientError("loss gradient is zero at x0");
    return finish(m, ex, normalized_step(ex.image, grad, cfg.epsilon), 1);
}

AttackResult pgd_iterative_attack(const Model& m, const LabeledExample& ex, const AttackConfig& cfg) {
    check_per_image(cfg);
    Image x = ex.image;
    for (int k = 1; k <= cfg.max_iterations; ++k) {
        const auto lg = loss_and_gradients(m, x, ex.label, true, false);
        if (logit_margin(lg.logits, ex.label) > cfg.confidence) return finish(m, ex, std::move(x), k - 1);
        if (l2_norm(lg.input_grad) == 0.0) {
            auto r = finish(m, ex, std::move(x), k - 1);
            r.degenerate_gradient = true;
            return r;
        }
        x = normalized_step(x, lg.input_grad, cfg.epsilon);
    }
    return finish(m, ex, std::move(x), cfg.max_iterations);
}

AttackResult perceptual_attack(const Model& m, const LabeledExample& ex, const AttackConfig& cfg,
                               const IterateObserver& observer) {
    check_per_image(cfg);
    Image x = ex.image;
    if (observer) observer(x);
    for (int k = 1; k <= cfg.max_iterations; ++k) {
        const auto lg = loss_and_gradients(m, x, ex.label, true, false);
        if (logit_margin(lg.logits, ex.label) > cfg.confidence) return finish(m, ex, std::move(x), k - 1);
        const auto cost_grad = cfg.cost->gradient(ex.image, x);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double delta = lg.input_grad[i] - cfg.lambda * cost_grad[i];
            if (!std::isfinite(delta))
                throw NumericError("non-finite ascent direction at iteration " + std::to_string(k));
            x[i] += cfg.epsilon * delta;
        }
        validate_in_place(x);
        if (observer) observer(x);
    }
    return finish(m, ex, std::move(x), cfg.max_iterations);
}

AttackResult run_attack(const Model& m, const LabeledExample& ex, const AttackConfig& cfg) {
    switch (cfg.method) {
    case AttackMethod::ssim_one_step: return ssim_one_step_attack(m, ex, cfg);
    case AttackMethod::pgd_one_step: return pgd_one_step_attack(m, ex, cfg);
    case AttackMethod::pgd_iterative: return pgd_iterative_attack(m, ex, cfg);
    case AttackMethod::perceptual: return perceptual_attack(m, ex, cfg);
    }
    throw ParameterError("unknown attack method");
}

RobustLossValue robust_surrogate(const Model& m, const LabeledExample& ex, const AttackConfig& cfg) {
    RobustLossValue best{-std::numeric_limits<double>::infinity(), ex.image};
    perceptual_attack(m, ex, cfg, [&](const Image& x) {
        const double v = cross_entropy_loss(m, x, ex.label) - cfg.lambda * cfg.cost->value(ex.image, x);
        if (v > best.value) best = {v, x};
    });
    return best;
}

SuccessSummary summarize(std::vector<IndexedAttack> attacks, std::size_t eligible) {
    if (eligible == 0) throw UndefinedRateError("no correctly classified examples to attack");
    SuccessSummary s;
    s.eligible = eligible;
    for (const auto& a : attacks) {
        if (!a.result.success) continue;
        ++s.attacked;
        s.mean_distances.l1 += a.result.distances.l1;
        s.mean_distances.l2 += a.result.distances.l2;
        s.mean_distances.linf += a.result.distances.linf;
        s.mean_distances.one_minus_ssim += a.result.distances.one_minus_ssim;
    }
    if (s.attacked > 0) {
        const double k = static_cast<double>(s.attacked);
        s.mean_distances.l1 /= k;
        s.mean_distances.l2 /= k;
        s.mean_distances.linf /= k;
        s.mean_distances.one_minus_ssim /= k;
    }
    s.rate = static_cast<double>(s.attacked) / static_cast<double>(eligible);
    s.attacks = std::move(attacks);
    return s;
}

SuccessSummary success_rate(const Model& m, const Dataset& d, const AttackConfig& cfg,
                            std::size_t workers) {
    cfg.validate();
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (predict(m, d.examples[i].image) == d.examples[i].label) eligible.push_back(i);
    if (eligible.empty()) throw UndefinedRateError("no correctly classified examples to attack");
    std::vector<IndexedAttack> attacks(eligible.size());
    parallel_for(eligible.size(), workers, [&](std::size_t k) {
        attacks[k] = {eligible[k], run_attack(m, d.examples[eligible[k]], cfg)};
    });
    return summarize(std::move(attacks), eligible.size());
}

Image Defense::apply(const Image& x) const {
    switch (kind) {
    case Kind::none: return x;
    case Kind::bit_depth: return bit_depth_reduce(x, parameter);
    case Kind::jpeg: return jpeg_like_compress(x, parameter);
    }
    return x;
}

std::string Defense::name() const {
    switch (kind) {
    case Kind::none: return "none";
    case Kind::bit_depth: return "bitdepth";
    case Kind::jpeg: return "jpeg";
    }
    return "unknown";
}

Defense::Kind parse_defense_kind(const std::string& name) {
    if (name == "jpeg") return Defense::Kind::jpeg;
    if (name == "bitdepth") return Defense::Kind::bit_depth;
    if (name == "none") return Defense::Kind::none;
    throw ParameterError("unknown defense '" + name + "' (expected jpeg or bitdepth)");
}

double defended_rate(const Model& m, const Dataset& d, const SuccessSummary& attacks,
                     const Defense& defense) {
    if (attacks.eligible == 0) throw UndefinedRateError("no correctly classified examples to attack");
    std::size_t flipped = 0;
    for (const auto& a : attacks.attacks)
        flipped += predict(m, defense.apply(a.result.adversarial)) != d.examples[a.index].label;
    return static_cast<double>(flipped) / static_cast<double>(attacks.eligible);
}

double defense_success_rate(const Model& m, const Dataset& d, const AttackConfig& cfg,
                            const Defense& defense, std::size_t workers) {
    return defended_rate(m, d, success_rate(m, d, cfg, workers), defense);
}

std::vector<DefenseRow> defense_sweep(const Model& m, const Dataset& d, const AttackConfig& cfg,
                                      Defense::Kind kind, const std::vector<int>& parameters,
                                      std::size_t workers) {
    if (parameters.empty()) throw ParameterError("defense sweep needs at least one value");
    const auto attacks = success_rate(m, d, cfg, workers);
    std::vector<DefenseRow> rows;
    for (int p : parameters) rows.push_back({p, defended_rate(m, d, attacks, Defense{kind, p})});
    return rows;
}

} // namespace pdro
