#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "optmm/approximator.hpp"
#include "optmm/grid.hpp"
#include "optmm/market_sim.hpp"
#include "optmm/matrix.hpp"
#include "optmm/parallel.hpp"
#include "optmm/policy.hpp"
#include "optmm/rng.hpp"
#include "optmm/stats.hpp"

namespace optmm {

/// Thrown when a training loop hits non-finite parameters or a loss beyond
/// the guard threshold; the CLI maps it to its own exit code.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kLossGuard = 1e12;

enum class ResidualMode { literal, rate_normalized };
enum class FillTermMode { closed_form_mean, expanded_literal };
enum class ActorSign { ascent, paper_literal };

struct NetSpec {
    std::size_t hidden_width = 64;
    std::size_t residual_blocks = 2;
};

struct PolicyIterConfig {
    std::size_t outer_iterations = 3;     // L
    std::size_t paths_per_iteration = 32; // D
    double alpha = 1e-6;
    double gamma_temp = 0.01;
    std::size_t inner_epochs = 50;
    ResidualMode residual_mode = ResidualMode::literal;
    FillTermMode fill_term_mode = FillTermMode::closed_form_mean;
    bool stop_gradient_through_mean = false;
    OptimizerKind optimizer = OptimizerKind::sgd;
    double grad_clip = 0.0;  // 0 disables clipping
    std::size_t eval_paths = 100;

    void validate() const {
        if (outer_iterations < 1 || paths_per_iteration < 1 || inner_epochs < 1)
            throw std::invalid_argument("policy_iteration: L, D, inner_epochs must be >= 1");
        if (!(alpha >= 0.0)) throw std::invalid_argument("policy_iteration: alpha must be >= 0");
        if (!(gamma_temp > 0.0)) throw std::invalid_argument("policy_iteration: gamma_temp > 0");
    }
};

struct ActorCriticConfig {
    std::size_t episodes = 400;  // L
    double alpha = 1e-4;         // critic step
    double beta = 1e-3;          // actor step
    double cap = 0.1;
    double gamma_temp = 0.01;
    ActorSign actor_sign = ActorSign::ascent;
    bool grad_through_delta = false;
    OptimizerKind optimizer = OptimizerKind::sgd;
    double grad_clip = 0.0;
    std::size_t eval_every = 100;  // 0 disables periodic evaluation
    std::size_t eval_paths = 100;

    void validate() const {
        if (episodes < 1) throw std::invalid_argument("actor_critic: episodes must be >= 1");
        if (!(alpha >= 0.0) || !(beta >= 0.0))
            throw std::invalid_argument("actor_critic: alpha, beta must be >= 0");
        if (!(cap > 0.0)) throw std::invalid_argument("actor_critic: cap must be positive");
        if (!(gamma_temp > 0.0)) throw std::invalid_argument("actor_critic: gamma_temp > 0");
    }
};

struct IterationRecord {
    std::size_t iteration = 0;
    double loss = 0.0;
    SampleSummary eval_raw;
    SampleSummary eval_reg;
};

struct TrainingReport {
    std::string algo;
    std::uint64_t seed = 0;
    std::vector<double> losses;         // inner-epoch ML losses / per-episode critic losses
    std::vector<double> policy_losses;  // actor-critic only
    std::vector<IterationRecord> iterations;
    std::vector<std::vector<double>> eval_raw_returns;  // one row per recorded evaluation
    std::vector<std::vector<double>> eval_reg_returns;
    double min_posted_mean = 0.0;  // actor-critic: range of posted mean spreads
    double max_posted_mean = 0.0;
    double wall_clock_seconds = 0.0;  // printed, never serialized into artifacts
};

/// Value-network adapter with the (t, q) calling convention; the current
/// underlying price is staged separately for price-aware encodings.
struct NetValueFn {
    const Approximator* net = nullptr;
    const EncodingConfig* enc = nullptr;
    double current_S = 0.0;

    double operator()(double t, const IntMatrix& q) const {
        thread_local std::vector<double> x;
        x.resize(enc->dim(q.size()));
        encode_state(t, q, current_S, *enc, x);
        return net->forward_scalar(x);
    }
};

namespace detail {

inline double fills_dot_mean(const TrajectoryStep& step, std::span<const double> mean,
                             const OptionGrid& grid) {
    double acc = 0.0;
    for (std::size_t i = 0; i < grid.num_strikes(); ++i)
        for (std::size_t j = 0; j < grid.num_maturities(); ++j) {
            if (step.fills.dN_plus(i, j)) acc += mean[bid_index(grid, i, j)];
            if (step.fills.dN_minus(i, j)) acc += mean[ask_index(grid, i, j)];
        }
    return acc;
}

}  // namespace detail

/// Policy-iteration TD residual for one transition:
///   (V(t',q') - V(t,q))/dt + <policy mean, fills> + carry rate - gamma H.
/// literal keeps the fill term as a per-step quantity; rate_normalized
/// divides it by dt. expanded_literal replaces the exact closed-form mean
/// with the printed expansion (A/2B + V(q)/2) dN - V(q +/- unit) dN, which
/// drops a half on the perturbed-value terms.
template <ValueFn F>
double td_residual_pi(F&& value_fn, const GaussianQuotePolicy& behavior,
                      const TrajectoryStep& step, double t_next, const IntMatrix& q_next,
                      const OptionGrid& grid, double gamma_temp, double dt,
                      ResidualMode mode = ResidualMode::literal,
                      FillTermMode fill_mode = FillTermMode::closed_form_mean) {
    const double v_cur = value_fn(step.t, step.q);
    const double v_next = value_fn(t_next, q_next);
    if (!std::isfinite(v_cur) || !std::isfinite(v_next))
        throw DivergenceError("td_residual_pi: non-finite value output");
    const double dv = (v_next - v_cur) / dt;

    double fill_term = 0.0;
    if (fill_mode == FillTermMode::closed_form_mean) {
        fill_term = detail::fills_dot_mean(step, behavior.mean, grid);
    } else {
        IntMatrix pert = step.q;
        for (std::size_t i = 0; i < grid.num_strikes(); ++i)
            for (std::size_t j = 0; j < grid.num_maturities(); ++j) {
                const double base = grid.A(i, j) / (2.0 * grid.B(i, j));
                if (step.fills.dN_plus(i, j)) {
                    pert(i, j) = step.q(i, j) + 1;
                    fill_term += base + 0.5 * v_cur - value_fn(step.t, pert);
                    pert(i, j) = step.q(i, j);
                }
                if (step.fills.dN_minus(i, j)) {
                    pert(i, j) = step.q(i, j) - 1;
                    fill_term += base + 0.5 * v_cur - value_fn(step.t, pert);
                    pert(i, j) = step.q(i, j);
                }
            }
    }
    if (mode == ResidualMode::rate_normalized) fill_term /= dt;

    const double carry_rate = step.theta_gamma_pnl / dt;
    return dv + fill_term + carry_rate - gamma_temp * behavior.entropy();
}

/// Actor-critic TD residual (per-step form, value difference not divided by
/// dt): <fills, mu_phi> + carry dt - gamma H dt + V(t',q') - V(t,q).
template <ValueFn F>
double td_residual_ac(F&& value_fn, std::span<const double> policy_mean,
                      const TrajectoryStep& step, double t_next, const IntMatrix& q_next,
                      const OptionGrid& grid, double gamma_temp, double dt) {
    const double v_cur = value_fn(step.t, step.q);
    const double v_next = value_fn(t_next, q_next);
    if (!std::isfinite(v_cur) || !std::isfinite(v_next))
        throw DivergenceError("td_residual_ac: non-finite value output");
    const double entropy = entropy_from_variances(make_variances(grid, gamma_temp));
    return detail::fills_dot_mean(step, policy_mean, grid) + step.theta_gamma_pnl -
           gamma_temp * entropy * dt + v_next - v_cur;
}

struct LossResult {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Squared-residual loss 1/2 sum over steps of delta^2 dt across the whole
/// dataset, with the exact reverse-mode gradient in theta. The closed-form
/// policy mean inside each residual is a function of theta; its perturbed
/// value evaluations carry gradient unless stop_gradient is set.
inline LossResult martingale_loss(const Approximator& theta, const EncodingConfig& enc,
                                  const std::vector<Trajectory>& dataset, const OptionGrid& grid,
                                  double gamma_temp, double dt,
                                  ResidualMode mode = ResidualMode::literal,
                                  FillTermMode fill_mode = FillTermMode::closed_form_mean,
                                  bool stop_gradient = false, std::size_t workers = 1) {
    if (dataset.empty()) throw std::invalid_argument("martingale_loss: empty dataset");
    const std::size_t m = grid.num_strikes(), n = grid.num_maturities();
    const double entropy = quote_policy_entropy(grid, gamma_temp);
    const double fill_norm = mode == ResidualMode::rate_normalized ? 1.0 / dt : 1.0;

    struct Partial {
        double loss = 0.0;
        std::vector<double> grad;
    };
    std::vector<Partial> partials(dataset.size());

    parallel_for(dataset.size(), workers, [&](std::size_t d) {
        Partial& out = partials[d];
        out.grad.assign(theta.param_count(), 0.0);
        const Trajectory& traj = dataset[d];
        const std::size_t K = traj.steps.size();

        // state values along the path (K+1 entries, final state last)
        std::vector<std::vector<double>> enc_state(K + 1);
        std::vector<double> v_state(K + 1);
        for (std::size_t k = 0; k <= K; ++k) {
            const double t = k < K ? traj.steps[k].t : traj.final_t;
            const IntMatrix& q = k < K ? traj.steps[k].q : traj.final_q;
            const double S = k < K ? traj.steps[k].S : traj.final_S;
            enc_state[k].resize(enc.dim(m * n));
            encode_state(t, q, S, enc, enc_state[k]);
            v_state[k] = theta.forward_scalar(enc_state[k]);
            if (!std::isfinite(v_state[k]))
                throw DivergenceError("martingale_loss: non-finite value output");
        }

        std::vector<double> w_state(K + 1, 0.0);  // accumulated upstream per state
        const double upstream_one[1] = {1.0};
        std::vector<double> enc_pert(enc.dim(m * n));
        IntMatrix pert(m, n);

        for (std::size_t k = 0; k < K; ++k) {
            const TrajectoryStep& step = traj.steps[k];
            double fill_term = 0.0;
            double w_cur_fills = 0.0;
            struct PertGrad {
                IntMatrix q;
                double coeff;
            };
            std::vector<PertGrad> pending;

            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const int sides[2] = {step.fills.dN_plus(i, j), step.fills.dN_minus(i, j)};
                    for (int side = 0; side < 2; ++side) {
                        if (!sides[side]) continue;
                        pert = step.q;
                        pert(i, j) += side == 0 ? 1 : -1;
                        encode_state(step.t, pert, step.S, enc, enc_pert);
                        const double v_pert = theta.forward_scalar(enc_pert);
                        const double base = grid.A(i, j) / (2.0 * grid.B(i, j));
                        double pert_coeff;
                        if (fill_mode == FillTermMode::closed_form_mean) {
                            fill_term += base + 0.5 * (v_state[k] - v_pert);
                            pert_coeff = -0.5;
                        } else {
                            fill_term += base + 0.5 * v_state[k] - v_pert;
                            pert_coeff = -1.0;
                        }
                        w_cur_fills += 0.5;
                        if (!stop_gradient) pending.push_back({pert, pert_coeff});
                    }
                }

            const double delta = (v_state[k + 1] - v_state[k]) / dt + fill_term * fill_norm +
                                 step.theta_gamma_pnl / dt - gamma_temp * entropy;
            out.loss += 0.5 * delta * delta * dt;

            const double base_scale = delta * dt;
            w_state[k + 1] += base_scale / dt;
            w_state[k] += base_scale * (-1.0 / dt);
            if (!stop_gradient) {
                w_state[k] += base_scale * w_cur_fills * fill_norm;
                for (const auto& pg : pending) {
                    encode_state(step.t, pg.q, step.S, enc, enc_pert);
                    theta.accumulate_grad(enc_pert, upstream_one, out.grad,
                                          base_scale * pg.coeff * fill_norm);
                }
            }
        }
        for (std::size_t k = 0; k <= K; ++k)
            if (w_state[k] != 0.0)
                theta.accumulate_grad(enc_state[k], upstream_one, out.grad, w_state[k]);
    });

    LossResult result;
    result.grad.assign(theta.param_count(), 0.0);
    for (const Partial& p : partials) {
        result.loss += p.loss;
        for (std::size_t i = 0; i < result.grad.size(); ++i) result.grad[i] += p.grad[i];
    }
    if (!std::isfinite(result.loss) || std::abs(result.loss) > kLossGuard)
        throw DivergenceError("martingale_loss: loss guard tripped");
    return result;
}

/// Critic loss 1/2 sum of delta^2 over one episode with gradient in theta;
/// both value terms of each residual carry gradient.
inline LossResult critic_loss(const Approximator& theta, const EncodingConfig& enc,
                              const Trajectory& traj, const Approximator& phi,
                              const EncodingConfig& enc_phi, const OptionGrid& grid,
                              double gamma_temp, double dt, double cap) {
    const std::size_t K = traj.steps.size();
    const std::size_t mn = grid.num_options();
    const double entropy = quote_policy_entropy(grid, gamma_temp);

    LossResult result;
    result.grad.assign(theta.param_count(), 0.0);

    std::vector<std::vector<double>> enc_state(K + 1);
    std::vector<double> v_state(K + 1);
    for (std::size_t k = 0; k <= K; ++k) {
        const double t = k < K ? traj.steps[k].t : traj.final_t;
        const IntMatrix& q = k < K ? traj.steps[k].q : traj.final_q;
        const double S = k < K ? traj.steps[k].S : traj.final_S;
        enc_state[k].resize(enc.dim(mn));
        encode_state(t, q, S, enc, enc_state[k]);
        v_state[k] = theta.forward_scalar(enc_state[k]);
        if (!std::isfinite(v_state[k])) throw DivergenceError("critic_loss: non-finite value");
    }

    std::vector<double> w_state(K + 1, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const TrajectoryStep& step = traj.steps[k];
        const GaussianQuotePolicy pol =
            network_policy(phi, enc_phi, step.t, step.q, step.S, grid, gamma_temp, cap);
        const double delta = detail::fills_dot_mean(step, pol.mean, grid) + step.theta_gamma_pnl -
                             gamma_temp * entropy * dt + v_state[k + 1] - v_state[k];
        result.loss += 0.5 * delta * delta;
        w_state[k + 1] += delta;
        w_state[k] -= delta;
    }
    const double upstream_one[1] = {1.0};
    for (std::size_t k = 0; k <= K; ++k)
        if (w_state[k] != 0.0)
            theta.accumulate_grad(enc_state[k], upstream_one, result.grad, w_state[k]);
    if (!std::isfinite(result.loss) || std::abs(result.loss) > kLossGuard)
        throw DivergenceError("critic_loss: loss guard tripped");
    return result;
}

struct ActorGradientResult {
    std::vector<double> grad;
    double policy_objective = 0.0;  // sum of delta * log pi, the recorded policy loss
};

/// Score-function policy gradient sum of delta_k grad log pi(eps_k | t_k, q_k),
/// with each delta treated as a constant unless grad_through_delta is set.
inline ActorGradientResult actor_gradient(const Approximator& phi, const EncodingConfig& enc_phi,
                                          const Approximator& theta, const EncodingConfig& enc,
                                          const Trajectory& traj, const OptionGrid& grid,
                                          double gamma_temp, double dt, double cap,
                                          bool grad_through_delta = false) {
    const std::size_t K = traj.steps.size();
    const std::size_t mn = grid.num_options();
    const double entropy = quote_policy_entropy(grid, gamma_temp);

    ActorGradientResult result;
    result.grad.assign(phi.param_count(), 0.0);

    // per-state values with each state's own underlying price, matching the
    // critic's residuals exactly
    std::vector<double> v_state(K + 1);
    {
        std::vector<double> x(enc.dim(mn));
        for (std::size_t k = 0; k <= K; ++k) {
            const double t = k < K ? traj.steps[k].t : traj.final_t;
            const IntMatrix& q = k < K ? traj.steps[k].q : traj.final_q;
            const double S = k < K ? traj.steps[k].S : traj.final_S;
            encode_state(t, q, S, enc, x);
            v_state[k] = theta.forward_scalar(x);
            if (!std::isfinite(v_state[k]))
                throw DivergenceError("actor_gradient: non-finite value");
        }
    }

    std::vector<double> x_phi(enc_phi.dim(mn));
    for (std::size_t k = 0; k < K; ++k) {
        const TrajectoryStep& step = traj.steps[k];
        const GaussianQuotePolicy pol =
            network_policy(phi, enc_phi, step.t, step.q, step.S, grid, gamma_temp, cap);
        const double delta = detail::fills_dot_mean(step, pol.mean, grid) + step.theta_gamma_pnl -
                             gamma_temp * entropy * dt + v_state[k + 1] - v_state[k];
        result.policy_objective += delta * pol.log_prob(step.eps);
        policy_mean_score(phi, enc_phi, step.t, step.q, step.S, step.eps, grid, gamma_temp, cap,
                          result.grad, delta);
        if (grad_through_delta) {
            // delta depends on phi through <fills, mu_phi>
            encode_state(step.t, step.q, step.S, enc_phi, x_phi);
            const std::vector<double> raw = phi.forward(x_phi);
            std::vector<double> upstream(2 * mn, 0.0);
            for (std::size_t i = 0; i < grid.num_strikes(); ++i)
                for (std::size_t j = 0; j < grid.num_maturities(); ++j) {
                    const std::size_t bi = bid_index(grid, i, j), ai = ask_index(grid, i, j);
                    if (step.fills.dN_plus(i, j)) {
                        const double s = open_unit_sigmoid(raw[bi]);
                        upstream[bi] = cap * s * (1.0 - s);
                    }
                    if (step.fills.dN_minus(i, j)) {
                        const double s = open_unit_sigmoid(raw[ai]);
                        upstream[ai] = cap * s * (1.0 - s);
                    }
                }
            phi.accumulate_grad(x_phi, upstream, result.grad, pol.log_prob(step.eps));
        }
    }
    return result;
}

struct PolicyIterationResult {
    Approximator theta;
    TrainingReport report;
};

/// Outer policy-iteration loop: generate paths under the closed-form policy
/// of the current value net, descend the martingale loss for a number of
/// epochs, repeat. Evaluation paths reuse the same seed-derived streams every
/// iteration, so per-iteration results are paired for low-noise comparisons.
inline PolicyIterationResult policy_iteration(const OptionGrid& grid, const SimConfig& sim,
                                              const PolicyIterConfig& cfg, const NetSpec& net_spec,
                                              const EncodingConfig& enc, StreamFactory streams,
                                              std::size_t workers = 1) {
    cfg.validate();
    sim.validate();
    grid.validate(sim.T);
    const std::size_t mn = grid.num_options();

    Approximator theta = Approximator::make(enc.dim(mn), net_spec.hidden_width,
                                            net_spec.residual_blocks, 1);
    {
        RngStream init_rng = streams.stream(stream_tag::init, 0);
        theta.init_params(init_rng);
    }
    Optimizer opt(cfg.optimizer, cfg.alpha, cfg.grad_clip);

    TrainingReport report;
    report.algo = "policy_iteration";
    report.seed = streams.seed;

    SimConfig sim_gamma = sim;
    sim_gamma.gamma_temp = cfg.gamma_temp;

    auto policy_provider = [&](double t, const IntMatrix& q, double S) {
        NetValueFn value{&theta, &enc, S};
        return closed_form_policy(value, t, q, grid, cfg.gamma_temp, sim.q_max);
    };

    for (std::size_t l = 1; l <= cfg.outer_iterations; ++l) {
        std::vector<Trajectory> dataset(cfg.paths_per_iteration);
        parallel_for(cfg.paths_per_iteration, workers, [&](std::size_t d) {
            RngStream rng = streams.stream(stream_tag::paths, l, d);
            dataset[d] = generate_path(policy_provider, grid, sim_gamma, rng);
        });

        double last_loss = 0.0;
        for (std::size_t e = 0; e < cfg.inner_epochs; ++e) {
            LossResult res = martingale_loss(theta, enc, dataset, grid, cfg.gamma_temp, sim.dt,
                                             cfg.residual_mode, cfg.fill_term_mode,
                                             cfg.stop_gradient_through_mean, workers);
            opt.step(theta.params(), res.grad);
            for (double p : theta.params())
                if (!std::isfinite(p)) throw DivergenceError("policy_iteration: non-finite params");
            last_loss = res.loss;
            report.losses.push_back(res.loss);
        }

        const ReturnStats eval = evaluate_policy(
            policy_provider, grid, sim_gamma, cfg.eval_paths,
            [&](std::size_t p) { return streams.stream(stream_tag::eval, p); }, workers);
        report.iterations.push_back({l, last_loss, eval.raw, eval.regularized});
        report.eval_raw_returns.push_back(eval.raw_returns);
        report.eval_reg_returns.push_back(eval.reg_returns);
    }
    return {std::move(theta), std::move(report)};
}

struct ActorCriticResult {
    Approximator theta;
    Approximator phi;
    TrainingReport report;
};

/// Episode-wise actor-critic: one path per episode under the capped network
/// policy, then a critic descent step on the squared TD loss and an actor
/// step along the score-function gradient.
inline ActorCriticResult actor_critic(const OptionGrid& grid, const SimConfig& sim,
                                      const ActorCriticConfig& cfg, const NetSpec& value_spec,
                                      const NetSpec& policy_spec, const EncodingConfig& enc,
                                      StreamFactory streams, std::size_t workers = 1) {
    cfg.validate();
    sim.validate();
    grid.validate(sim.T);
    const std::size_t mn = grid.num_options();

    Approximator theta = Approximator::make(enc.dim(mn), value_spec.hidden_width,
                                            value_spec.residual_blocks, 1);
    Approximator phi = Approximator::make(enc.dim(mn), policy_spec.hidden_width,
                                          policy_spec.residual_blocks, 2 * mn);
    {
        RngStream init_theta = streams.stream(stream_tag::init, 0);
        theta.init_params(init_theta);
        RngStream init_phi = streams.stream(stream_tag::init, 1);
        phi.init_params(init_phi);
    }
    Optimizer critic_opt(cfg.optimizer, cfg.alpha, cfg.grad_clip);

    TrainingReport report;
    report.algo = "actor_critic";
    report.seed = streams.seed;
    report.min_posted_mean = cfg.cap;
    report.max_posted_mean = 0.0;

    SimConfig sim_gamma = sim;
    sim_gamma.gamma_temp = cfg.gamma_temp;

    auto tracked_provider = [&](double t, const IntMatrix& q, double S) {
        GaussianQuotePolicy pol = network_policy(phi, enc, t, q, S, grid, cfg.gamma_temp, cfg.cap);
        for (double mval : pol.mean) {
            report.min_posted_mean = std::min(report.min_posted_mean, mval);
            report.max_posted_mean = std::max(report.max_posted_mean, mval);
        }
        return pol;
    };

    auto evaluate_now = [&](std::size_t episode, double loss) {
        const ReturnStats eval = evaluate_policy(
            tracked_provider, grid, sim_gamma, cfg.eval_paths,
            [&](std::size_t p) { return streams.stream(stream_tag::eval, p); }, 1);
        report.iterations.push_back({episode, loss, eval.raw, eval.regularized});
        report.eval_raw_returns.push_back(eval.raw_returns);
        report.eval_reg_returns.push_back(eval.reg_returns);
    };

    for (std::size_t l = 1; l <= cfg.episodes; ++l) {
        RngStream rng = streams.stream(stream_tag::paths, l, 0);
        const Trajectory traj = generate_path(tracked_provider, grid, sim_gamma, rng);

        const LossResult critic =
            critic_loss(theta, enc, traj, phi, enc, grid, cfg.gamma_temp, sim.dt, cfg.cap);
        const ActorGradientResult actor = actor_gradient(
            phi, enc, theta, enc, traj, grid, cfg.gamma_temp, sim.dt, cfg.cap,
            cfg.grad_through_delta);

        critic_opt.step(theta.params(), critic.grad);
        // actor ascends the policy objective by default; paper_literal keeps
        // the printed minus sign
        std::vector<double> actor_step = actor.grad;
        if (cfg.actor_sign == ActorSign::ascent)
            for (double& g : actor_step) g = -g;
        sgd_step(phi.params(), actor_step, cfg.beta, cfg.grad_clip);

        for (double p : theta.params())
            if (!std::isfinite(p)) throw DivergenceError("actor_critic: non-finite critic params");
        for (double p : phi.params())
            if (!std::isfinite(p)) throw DivergenceError("actor_critic: non-finite actor params");

        report.losses.push_back(critic.loss);
        report.policy_losses.push_back(actor.policy_objective);
        if (cfg.eval_every > 0 && (l % cfg.eval_every == 0 || l == cfg.episodes))
            evaluate_now(l, critic.loss);
    }
    (void)workers;
    return {std::move(theta), std::move(phi), std::move(report)};
}

struct ImprovementStats {
    double baseline_mean = 0.0, baseline_se = 0.0;
    double candidate_mean = 0.0, candidate_se = 0.0;
    double diff_mean = 0.0, diff_se = 0.0;  // paired by common path streams
    std::size_t n_paths = 0;
    bool pass = false;
};

/// Monte Carlo check of the improvement guarantee: the regularized objective
/// of the closed-form policy built from a fitted value net should not fall
/// below the flat-value baseline. Both policies see identical random streams
/// per path index, so the difference estimate is paired.
inline ImprovementStats verify_policy_improvement(const Approximator& theta,
                                                  const EncodingConfig& enc, const OptionGrid& grid,
                                                  const SimConfig& sim, std::size_t n_paths,
                                                  StreamFactory streams, std::size_t workers = 1) {
    auto zero_value = [](double, const IntMatrix&) { return 0.0; };
    auto baseline = [&](double t, const IntMatrix& q, double) {
        return closed_form_policy(zero_value, t, q, grid, sim.gamma_temp, sim.q_max);
    };
    auto candidate = [&](double t, const IntMatrix& q, double S) {
        NetValueFn value{&theta, &enc, S};
        return closed_form_policy(value, t, q, grid, sim.gamma_temp, sim.q_max);
    };

    std::vector<double> base_ret(n_paths), cand_ret(n_paths);
    parallel_for(n_paths, workers, [&](std::size_t p) {
        RngStream r1 = streams.stream(stream_tag::improvement, p);
        base_ret[p] = generate_path(baseline, grid, sim, r1).regularized_return();
        RngStream r2 = streams.stream(stream_tag::improvement, p);
        cand_ret[p] = generate_path(candidate, grid, sim, r2).regularized_return();
    });

    std::vector<double> diff(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) diff[p] = cand_ret[p] - base_ret[p];
    const SampleSummary sb = summarize(base_ret), sc = summarize(cand_ret), sd = summarize(diff);

    ImprovementStats out;
    out.baseline_mean = sb.mean;
    out.baseline_se = sb.std_error();
    out.candidate_mean = sc.mean;
    out.candidate_se = sc.std_error();
    out.diff_mean = sd.mean;
    out.diff_se = sd.std_error();
    out.n_paths = n_paths;
    out.pass = sd.mean >= -2.0 * sd.std_error();
    return out;
}

}  // namespace optmm
