#include "uqadv/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace uqadv {

LabelledData LabelledData::subset(const std::vector<Index>& rows) const {
    LabelledData out;
    out.inputs.resize(static_cast<Index>(rows.size()), inputs.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.inputs.row(static_cast<Index>(i)) = inputs.row(rows[i]);
        out.labels.push_back(labels[static_cast<std::size_t>(rows[i])]);
    }
    return out;
}

std::string_view member_kind_name(MemberKind kind) {
    switch (kind) {
        case MemberKind::hmc: return "hmc";
        case MemberKind::dropout_mask: return "dropout_mask";
        case MemberKind::independent: return "independent";
    }
    return "unknown";
}

void PosteriorEnsemble::validate() const {
    if (!spec) throw Error("ensemble has no spec");
    if (members.empty()) throw Error("ensemble must have at least one member");
    if (weights.size() != size()) throw Error("ensemble weights do not match member count");
    for (const EnsembleMember& m : members) {
        if (!m.params.spec || !(*m.params.spec == *spec)) throw Error("ensemble member does not match the shared spec");
        if (m.params.values.size() != spec->param_count()) throw Error("ensemble member has wrong parameter count");
        if (m.mask && m.mask->keep.size() != spec->hidden_sizes.size())
            throw Error("ensemble member mask does not match the shared spec");
    }
}

PosteriorEnsemble make_ensemble(std::shared_ptr<const NetworkSpec> spec, MemberKind kind,
                                std::vector<EnsembleMember> members) {
    PosteriorEnsemble e;
    e.spec = std::move(spec);
    e.kind = kind;
    e.members = std::move(members);
    const auto m = static_cast<Index>(e.members.size());
    e.weights = Eigen::VectorXd::Constant(m, m > 0 ? 1.0 / static_cast<double>(m) : 0.0);
    e.validate();
    return e;
}

PosteriorEnsemble deterministic_ensemble(const ParamVector& params) {
    return make_ensemble(params.spec, MemberKind::independent, {EnsembleMember{params, std::nullopt}});
}

std::vector<PredictiveDistribution> predictive_batch(const PosteriorEnsemble& ensemble, const RowMatrix& inputs) {
    ensemble.validate();
    const Index n = inputs.rows();
    const Index k = ensemble.spec->num_classes;
    const Index m = ensemble.size();
    std::vector<PredictiveDistribution> out(static_cast<std::size_t>(n));
    for (auto& pd : out) {
        pd.member_probs.resize(m, k);
        pd.mean_probs = Eigen::VectorXd::Zero(k);
    }
    for (Index j = 0; j < m; ++j) {
        const EnsembleMember& member = ensemble.members[static_cast<std::size_t>(j)];
        const RowMatrix probs =
            predict_probs_rows(forward_logits_batch(member.params, inputs, member.mask ? &*member.mask : nullptr));
        for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)].member_probs.row(j) = probs.row(i);
    }
    for (auto& pd : out) pd.mean_probs = pd.member_probs.transpose() * ensemble.weights;
    return out;
}

PredictiveDistribution predictive(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x) {
    RowMatrix row = x.transpose();
    return std::move(predictive_batch(ensemble, row).front());
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw Error("train config: learning_rate must be >= 0");
    if (epochs < 0) throw Error("train config: epochs must be >= 0");
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("train config: momentum must lie in [0, 1)");
}

namespace {

void check_data(const NetworkSpec& spec, const LabelledData& data) {
    if (data.size() == 0) throw Error("dataset is empty");
    if (data.inputs.cols() != spec.input_dim) throw Error("dataset dimension does not match the network input");
    if (static_cast<Index>(data.labels.size()) != data.size()) throw Error("dataset labels do not match inputs");
    for (int y : data.labels)
        if (y < 0 || y >= spec.num_classes) throw Error("label " + std::to_string(y) + " outside [0, K)");
}

Tensor label_tensor(const std::vector<int>& labels) {
    Eigen::VectorXd v(static_cast<Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) v[static_cast<Index>(i)] = labels[i];
    return Tensor::vector(v);
}

}  // namespace

ParamVector train_map(const NetworkSpec& spec, const LabelledData& data, const TrainConfig& config,
                      const std::optional<ParamVector>& init) {
    spec.validate();
    config.validate();
    check_data(spec, data);
    ParamVector params = init ? *init : init_params(spec, config.seed);
    if (config.learning_rate == 0.0 || config.epochs == 0) return params;

    const bool use_dropout = spec.dropout_rate > 0.0 && !spec.hidden_sizes.empty();
    Rng rng(derive_seed(config.seed, "sgd"));
    std::bernoulli_distribution keep(1.0 - spec.dropout_rate);
    const double keep_scale = 1.0 / (1.0 - spec.dropout_rate);

    std::vector<Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Index{0});
    Eigen::VectorXd velocity = Eigen::VectorXd::Zero(params.values.size());

    // Graphs depend on the batch size only through the loss scale; cache full and tail batches.
    auto make_graph = [&](Index rows) {
        return build_loss_graph(spec, use_dropout, 1.0 / static_cast<double>(rows), config.weight_decay);
    };
    const Index batch = std::min<Index>(config.batch_size, data.size());
    const Graph full_graph = make_graph(batch);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (Index start = 0; start < data.size(); start += batch) {
            const Index rows = std::min(batch, data.size() - start);
            RowMatrix xb(rows, data.inputs.cols());
            Eigen::VectorXd yb(rows);
            for (Index r = 0; r < rows; ++r) {
                const Index src = order[static_cast<std::size_t>(start + r)];
                xb.row(r) = data.inputs.row(src);
                yb[r] = data.labels[static_cast<std::size_t>(src)];
            }
            const Tensor xt = Tensor::matrix(xb);
            const Tensor yt = Tensor::vector(yb);
            const Tensor pt = Tensor::vector(params.values);
            Inputs in;
            in.bind("x", xt).bind("params", pt).bind("labels", yt);
            std::vector<Tensor> masks;
            if (use_dropout) {
                for (Index h : spec.hidden_sizes) {
                    RowMatrix m(rows, h);
                    for (Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? keep_scale : 0.0;
                    masks.push_back(Tensor::matrix(m));
                }
                for (std::size_t l = 0; l < masks.size(); ++l) in.bind("mask" + std::to_string(l), masks[l]);
            }
            ValueAndGrad vg;
            try {
                vg = rows == batch ? value_and_grad(full_graph, in, "params")
                                   : value_and_grad(make_graph(rows), in, "params");
            } catch (const GraphError& e) {
                throw Error("train_map: non-finite loss at epoch " + std::to_string(epoch) + ", batch offset " +
                            std::to_string(start) + ": " + e.what());
            }
            velocity = config.momentum * velocity - config.learning_rate * vg.gradient.values();
            params.values += velocity;
            if (!params.values.allFinite())
                throw Error("train_map: parameters diverged at epoch " + std::to_string(epoch));
        }
    }
    return params;
}

double accuracy(const ParamVector& params, const LabelledData& data) {
    if (data.size() == 0) return 0.0;
    const RowMatrix logits = forward_logits_batch(params, data.inputs);
    Index correct = 0;
    for (Index i = 0; i < data.size(); ++i) {
        Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        if (arg == data.labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------

void HmcConfig::validate() const {
    if (!(step_size > 0.0)) throw Error("hmc config: step_size must be positive");
    if (leapfrog_steps < 1) throw Error("hmc config: leapfrog_steps must be positive");
    if (num_samples < 1) throw Error("hmc config: num_samples must be >= 1");
    if (burn_in < 0) throw Error("hmc config: burn_in must be >= 0");
    if (thinning < 1) throw Error("hmc config: thinning must be >= 1");
    if (!(prior_precision > 0.0)) throw Error("hmc config: prior_precision must be positive");
}

LeapfrogState leapfrog(const Eigen::VectorXd& position, const Eigen::VectorXd& momentum, double step_size,
                       int steps, const GradientFn& grad_u) {
    LeapfrogState s{position, momentum, false};
    if (steps <= 0) return s;
    Eigen::VectorXd g = grad_u(s.position);
    if (!g.allFinite()) {
        s.divergent = true;
        return s;
    }
    s.momentum -= 0.5 * step_size * g;
    for (int i = 0; i < steps; ++i) {
        s.position += step_size * s.momentum;
        g = grad_u(s.position);
        if (!g.allFinite()) {
            s.divergent = true;
            return s;
        }
        s.momentum -= (i + 1 == steps ? 0.5 : 1.0) * step_size * g;
    }
    return s;
}

ChainResult hmc_chain(const PotentialFn& potential, const Eigen::VectorXd& start, const HmcConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, "hmc-chain"));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    Eigen::VectorXd q = start;
    Eigen::VectorXd grad(q.size());
    double u = potential(q, grad);
    if (!std::isfinite(u) || !grad.allFinite()) throw Error("hmc: potential is not finite at the start position");

    ChainResult result;
    const int total = config.burn_in + config.num_samples * config.thinning;
    int accepted = 0;
    for (int it = 0; it < total; ++it) {
        const Eigen::VectorXd p0 = standard_normal(q.size(), rng);
        Eigen::VectorXd qn = q;
        Eigen::VectorXd pn = p0;
        Eigen::VectorXd gn = grad;
        double un = u;
        bool divergent = false;

        // Leapfrog, reusing the cached gradient at the start point.
        pn -= 0.5 * config.step_size * gn;
        for (int s = 0; s < config.leapfrog_steps; ++s) {
            qn += config.step_size * pn;
            try {
                un = potential(qn, gn);
            } catch (const GraphError&) {
                divergent = true;
                break;
            }
            if (!std::isfinite(un) || !gn.allFinite()) {
                divergent = true;
                break;
            }
            pn -= (s + 1 == config.leapfrog_steps ? 0.5 : 1.0) * config.step_size * gn;
        }

        bool accept = false;
        if (!divergent) {
            const double h_old = u + 0.5 * p0.squaredNorm();
            const double h_new = un + 0.5 * pn.squaredNorm();
            const double log_ratio = h_old - h_new;
            accept = std::isfinite(log_ratio) && (log_ratio >= 0.0 || std::log(uniform(rng)) < log_ratio);
        } else {
            ++result.divergent;
        }
        if (accept) {
            q = std::move(qn);
            grad = std::move(gn);
            u = un;
        }
        if (it >= config.burn_in) {
            accepted += accept ? 1 : 0;
            if ((it - config.burn_in + 1) % config.thinning == 0) result.samples.push_back(q);
        }
    }
    const int post = total - config.burn_in;
    result.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(post);
    if (result.acceptance_rate < 0.1)
        result.warnings.push_back("low HMC acceptance rate " + std::to_string(result.acceptance_rate) +
                                  " after burn-in");
    return result;
}

HmcResult hmc_sample(const NetworkSpec& spec, const LabelledData& data, const HmcConfig& config,
                     const std::optional<ParamVector>& start) {
    spec.validate();
    config.validate();
    if (data.size() > 0) check_data(spec, data);
    auto shared = std::make_shared<const NetworkSpec>(spec);

    PotentialFn potential;
    Tensor xt;
    Tensor yt;
    Graph graph;
    if (data.size() > 0) {
        xt = Tensor::matrix(data.inputs);
        yt = label_tensor(data.labels);
        graph = build_loss_graph(spec, false, 1.0, config.prior_precision);
        potential = [&](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
            const Tensor pt = Tensor::vector(q);
            Inputs in;
            in.bind("x", xt).bind("params", pt).bind("labels", yt);
            ValueAndGrad vg = value_and_grad(graph, in, "params");
            g = std::move(vg.gradient.values());
            return vg.value;
        };
    } else {
        // Empty dataset: the posterior is the Gaussian prior.
        potential = [lambda = config.prior_precision](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
            g = lambda * q;
            return 0.5 * lambda * q.squaredNorm();
        };
    }

    const Eigen::VectorXd q0 =
        start ? start->values : init_params(spec, derive_seed(config.seed, "hmc-init")).values;
    ChainResult chain = hmc_chain(potential, q0, config);

    std::vector<EnsembleMember> members;
    members.reserve(chain.samples.size());
    for (auto& s : chain.samples) members.push_back({ParamVector{shared, std::move(s)}, std::nullopt});
    HmcResult out{make_ensemble(shared, MemberKind::hmc, std::move(members)), chain.acceptance_rate,
                  std::move(chain.warnings)};
    return out;
}

// ---------------------------------------------------------------------------

PosteriorEnsemble mc_dropout_ensemble(const ParamVector& params, int num_passes, std::uint64_t seed) {
    if (num_passes < 1) throw Error("mc dropout: num_passes must be >= 1");
    const NetworkSpec& spec = params.network();
    std::vector<EnsembleMember> members;
    for (int m = 0; m < num_passes; ++m)
        members.push_back({params, sample_mask(spec, derive_seed(seed, "dropout-mask", static_cast<std::uint64_t>(m)))});
    return make_ensemble(params.spec, MemberKind::dropout_mask, std::move(members));
}

PosteriorEnsemble deep_ensemble(const NetworkSpec& spec, const LabelledData& data, const TrainConfig& config,
                                int num_members, std::uint64_t base_seed, int passes_per_member) {
    if (num_members < 1) throw Error("deep ensemble: num_members must be >= 1");
    std::vector<EnsembleMember> members;
    std::shared_ptr<const NetworkSpec> shared;
    for (int i = 0; i < num_members; ++i) {
        TrainConfig member_config = config;
        member_config.seed = base_seed + static_cast<std::uint64_t>(i);
        const ParamVector params = train_map(spec, data, member_config);
        if (!shared) shared = params.spec;
        const ParamVector member{shared, params.values};
        if (spec.dropout_rate > 0.0) {
            const PosteriorEnsemble passes =
                mc_dropout_ensemble(member, passes_per_member, derive_seed(member_config.seed, "ensemble-passes"));
            for (const auto& m : passes.members) members.push_back(m);
        } else {
            members.push_back({member, std::nullopt});
        }
    }
    return make_ensemble(shared, MemberKind::independent, std::move(members));
}

}  // namespace uqadv
