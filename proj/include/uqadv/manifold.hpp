#pragma once

// Synthetic data with a known input density.
//
// Latents follow a per-class Gaussian mixture in 2D; inputs are produced by a
// fixed sine-network decoder plus isotropic Gaussian observation noise, so
// p(x) = integral of N(x; decode(z), sigma_x^2 I) p(z) dz is available both by
// Monte Carlo over the latent prior and by 2D quadrature.

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "uqadv/inference.hpp"

namespace uqadv {

struct ManifoldConfig {
    Index input_dim = 32;
    int num_classes = 3;
    int components_per_class = 5;
    double sigma_z = 0.35;
    double sigma_x = 0.05;
    /// Class centres sit on a circle of this radius; components scatter within `component_spread`.
    double class_radius = 2.0;
    double component_spread = 0.9;
    std::uint64_t mixture_seed = 0;
    Index decoder_hidden = 16;
    double decoder_frequency = 0.3;
    double decoder_scale = 0.3;
    std::uint64_t decoder_seed = 0;

    void validate() const;
};

struct MixtureComponent {
    Eigen::Vector2d mean;
    double weight = 1.0;  // within its class
    int label = 0;
};

struct LatentMixture {
    std::vector<MixtureComponent> components;
    Eigen::VectorXd class_prior;
    double sigma_z = 1.0;

    int num_classes() const { return static_cast<int>(class_prior.size()); }
    void validate() const;
};

LatentMixture make_mixture(const ManifoldConfig& config);

/// log sum_c p(c) sum_j w_cj N(z; mu_cj, sigma_z^2 I)
double latent_log_density(const LatentMixture& mix, const Eigen::Vector2d& z);
/// log p(z | c)
double class_log_density(const LatentMixture& mix, const Eigen::Vector2d& z, int label);

/// Draws (label, latent) pairs from the mixture.
struct LatentDraw {
    int label = 0;
    Eigen::Vector2d z;
};
LatentDraw sample_latent(const LatentMixture& mix, Rng& rng);

/// Fixed 2 -> H -> H -> D sine network: out = 0.5 + scale * W3 sin(W2 sin(W1 z + b1) + b2) / sqrt(H).
class Decoder {
public:
    Decoder(Index output_dim, Index hidden, double frequency, double scale, double sigma_x, std::uint64_t seed);
    explicit Decoder(const ManifoldConfig& config);

    Index output_dim() const { return w3_.rows(); }
    double sigma_x() const { return sigma_x_; }

    Eigen::VectorXd decode(const Eigen::Vector2d& z) const;
    /// Rows of `latents` (N x 2) to rows of the result (N x D).
    RowMatrix decode_batch(const RowMatrix& latents) const;
    /// log N(x; decode(z), sigma_x^2 I)
    double log_likelihood(const Eigen::VectorXd& x, const Eigen::Vector2d& z) const;

private:
    RowMatrix w1_;
    Eigen::VectorXd b1_;
    RowMatrix w2_;
    Eigen::VectorXd b2_;
    RowMatrix w3_;
    double scale_;
    double sigma_x_;
};

struct LatentBounds {
    double x_lo = -1.0;
    double x_hi = 1.0;
    double y_lo = -1.0;
    double y_hi = 1.0;
};

/// Bounding box of the component means widened by `margin_sigmas * sigma_z`.
LatentBounds mixture_bounds(const LatentMixture& mix, double margin_sigmas);
/// Mixture mean widened by `sigmas` marginal standard deviations per axis.
LatentBounds envelope_bounds(const LatentMixture& mix, double sigmas);

/// Precomputed trapezoidal quadrature of p(x|z) p(z) over a latent lattice.
class QuadratureGrid {
public:
    /// Throws unless `bounds` reach at least 6 sigma_z beyond every component mean
    /// and `resolution` >= 200.
    QuadratureGrid(const LatentMixture& mix, const Decoder& dec, const LatentBounds& bounds, Index resolution);

    double log_density(const Eigen::VectorXd& x) const;

private:
    RowMatrix decoded_;
    Eigen::VectorXd log_weight_;  // log prior + log trapezoid weight
    double sigma_x_;
};

double image_log_density_quadrature(const Eigen::VectorXd& x, const LatentMixture& mix, const Decoder& dec,
                                    const LatentBounds& bounds, Index resolution);

struct IsEstimate {
    double log_density = 0.0;
    double effective_sample_size = 0.0;
    /// Set when a single draw carries essentially all the weight: raise the sample count.
    bool degenerate = false;
};

/// log((1/T) sum_t p(x | z_t)), z_t ~ p(z), evaluated with log-sum-exp.
IsEstimate image_log_density_is(const Eigen::VectorXd& x, const LatentMixture& mix, const Decoder& dec,
                                Index samples, std::uint64_t seed);

struct ManifoldDataset {
    RowMatrix latents;  // N x 2
    RowMatrix inputs;   // N x D
    std::vector<int> labels;
    Eigen::VectorXd gt_log_density;  // nats
    int num_classes = 0;
    std::uint64_t seed = 0;

    Index size() const { return inputs.rows(); }
    LabelledData labelled() const { return {inputs, labels}; }
};

/// iid c ~ p(c), z ~ p(z|c), x = decode(z) + sigma_x N(0, I); densities by `quadrature`.
ManifoldDataset sample_dataset(const LatentMixture& mix, const Decoder& dec, const QuadratureGrid& quadrature,
                               Index n, std::uint64_t seed);

void write_dataset(std::ostream& out, const ManifoldDataset& data);
ManifoldDataset read_dataset(std::istream& in, const std::string& source = "<stream>");
void save_dataset(const std::filesystem::path& path, const ManifoldDataset& data);
ManifoldDataset load_dataset(const std::filesystem::path& path);

struct GridDataset {
    RowMatrix latents;  // resolution^2 x 2, x varies fastest
    RowMatrix inputs;   // noise-free decodes
    Index resolution = 0;
    LatentBounds bounds;

    Index size() const { return latents.rows(); }
};

/// Equally spaced resolution x resolution lattice over `bounds`.
RowMatrix lattice(const LatentBounds& bounds, Index resolution);
GridDataset make_grid(const Decoder& dec, const LatentBounds& bounds, Index resolution);

struct SpheresDataset {
    Index dim = 0;
    double r_inner = 1.0;
    double r_outer = 1.3;
    RowMatrix points;
    std::vector<int> labels;  // inner -> 1, outer -> 0

    LabelledData labelled() const { return {points, labels}; }
};

SpheresDataset make_spheres(Index dim, double r_inner, double r_outer, Index n_per_sphere, std::uint64_t seed);

}  // namespace uqadv
