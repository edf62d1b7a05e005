#include "uqadv/manifold.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "uqadv/io.hpp"

namespace uqadv {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2 pi)
}

void ManifoldConfig::validate() const {
    if (input_dim < 1) throw Error("manifold config: input_dim must be positive");
    if (num_classes < 2) throw Error("manifold config: need at least two classes");
    if (components_per_class < 1) throw Error("manifold config: components_per_class must be positive");
    if (!(sigma_z > 0.0)) throw Error("manifold config: sigma_z must be positive");
    if (!(sigma_x > 0.0)) throw Error("manifold config: sigma_x must be positive");
    if (decoder_hidden < 1) throw Error("manifold config: decoder_hidden must be positive");
}

void LatentMixture::validate() const {
    if (!(sigma_z > 0.0)) throw Error("latent mixture: sigma_z must be positive");
    if (class_prior.size() < 1 || std::abs(class_prior.sum() - 1.0) > 1e-12 || (class_prior.array() < 0.0).any())
        throw Error("latent mixture: class prior must be a distribution");
    Eigen::VectorXd per_class = Eigen::VectorXd::Zero(class_prior.size());
    for (const auto& c : components) {
        if (c.label < 0 || c.label >= class_prior.size()) throw Error("latent mixture: component label out of range");
        if (!(c.weight >= 0.0)) throw Error("latent mixture: negative component weight");
        per_class[c.label] += c.weight;
    }
    if (((per_class.array() - 1.0).abs() > 1e-12).any())
        throw Error("latent mixture: component weights must sum to 1 within each class");
}

LatentMixture make_mixture(const ManifoldConfig& config) {
    config.validate();
    LatentMixture mix;
    mix.sigma_z = config.sigma_z;
    mix.class_prior = Eigen::VectorXd::Constant(config.num_classes, 1.0 / config.num_classes);
    Rng rng(derive_seed(config.mixture_seed, "mixture"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 0; c < config.num_classes; ++c) {
        const double angle = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * c / config.num_classes;
        const Eigen::Vector2d centre(config.class_radius * std::cos(angle), config.class_radius * std::sin(angle));
        for (int j = 0; j < config.components_per_class; ++j) {
            // Uniform in a disk of radius component_spread.
            const double r = config.component_spread * std::sqrt(unit(rng));
            const double t = 2.0 * std::numbers::pi * unit(rng);
            MixtureComponent comp;
            comp.mean = centre + Eigen::Vector2d(r * std::cos(t), r * std::sin(t));
            comp.weight = 1.0 / config.components_per_class;
            comp.label = c;
            mix.components.push_back(comp);
        }
    }
    mix.validate();
    return mix;
}

namespace {

// Terms log(p(c) w_cj N(z; mu, s^2 I)) for the selected components.
template <typename Select>
double mixture_log_sum(const LatentMixture& mix, const Eigen::Vector2d& z, bool with_prior, Select select) {
    const double s2 = mix.sigma_z * mix.sigma_z;
    const double norm = -kLog2Pi - std::log(s2);
    Eigen::VectorXd terms(static_cast<Index>(mix.components.size()));
    Index n = 0;
    for (const auto& c : mix.components) {
        if (!select(c)) continue;
        double t = norm - 0.5 * (z - c.mean).squaredNorm() / s2;
        t += std::log(c.weight);
        if (with_prior) t += std::log(mix.class_prior[c.label]);
        terms[n++] = t;
    }
    if (n == 0) return -std::numeric_limits<double>::infinity();
    return log_sum_exp(terms.head(n));
}

}  // namespace

double latent_log_density(const LatentMixture& mix, const Eigen::Vector2d& z) {
    return mixture_log_sum(mix, z, true, [](const MixtureComponent&) { return true; });
}

double class_log_density(const LatentMixture& mix, const Eigen::Vector2d& z, int label) {
    return mixture_log_sum(mix, z, false, [label](const MixtureComponent& c) { return c.label == label; });
}

LatentDraw sample_latent(const LatentMixture& mix, Rng& rng) {
    std::discrete_distribution<int> pick_class(mix.class_prior.data(), mix.class_prior.data() + mix.class_prior.size());
    LatentDraw d;
    d.label = pick_class(rng);
    std::vector<double> w;
    std::vector<const MixtureComponent*> comps;
    for (const auto& c : mix.components)
        if (c.label == d.label) {
            w.push_back(c.weight);
            comps.push_back(&c);
        }
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    const MixtureComponent& c = *comps[pick(rng)];
    std::normal_distribution<double> normal;
    const double e0 = normal(rng);
    const double e1 = normal(rng);
    d.z = c.mean + mix.sigma_z * Eigen::Vector2d(e0, e1);
    return d;
}

// ---------------------------------------------------------------------------

Decoder::Decoder(Index output_dim, Index hidden, double frequency, double scale, double sigma_x, std::uint64_t seed)
    : scale_(scale), sigma_x_(sigma_x) {
    if (output_dim < 1 || hidden < 1) throw Error("decoder: dimensions must be positive");
    if (!(sigma_x > 0.0)) throw Error("decoder: sigma_x must be positive");
    Rng rng(derive_seed(seed, "decoder"));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
    w1_.resize(hidden, 2);
    b1_.resize(hidden);
    w2_.resize(hidden, hidden);
    b2_.resize(hidden);
    w3_.resize(output_dim, hidden);
    for (Index i = 0; i < w1_.size(); ++i) w1_.data()[i] = frequency * normal(rng);
    for (Index i = 0; i < hidden; ++i) b1_[i] = phase(rng);
    const double gain = 1.5 / std::sqrt(static_cast<double>(hidden));
    for (Index i = 0; i < w2_.size(); ++i) w2_.data()[i] = gain * normal(rng);
    for (Index i = 0; i < hidden; ++i) b2_[i] = phase(rng);
    for (Index i = 0; i < w3_.size(); ++i) w3_.data()[i] = normal(rng) / std::sqrt(static_cast<double>(hidden));
}

Decoder::Decoder(const ManifoldConfig& config)
    : Decoder(config.input_dim, config.decoder_hidden, config.decoder_frequency, config.decoder_scale,
              config.sigma_x, config.decoder_seed) {}

RowMatrix Decoder::decode_batch(const RowMatrix& latents) const {
    if (latents.cols() != 2) throw Error("decoder: latents must have two columns");
    RowMatrix h1 = latents * w1_.transpose();
    h1.rowwise() += b1_.transpose();
    h1 = h1.array().sin().matrix();
    RowMatrix h2 = h1 * w2_.transpose();
    h2.rowwise() += b2_.transpose();
    h2 = h2.array().sin().matrix();
    RowMatrix out = scale_ * (h2 * w3_.transpose());
    out.array() += 0.5;
    return out;
}

Eigen::VectorXd Decoder::decode(const Eigen::Vector2d& z) const {
    RowMatrix row = z.transpose();
    return decode_batch(row).row(0).transpose();
}

double Decoder::log_likelihood(const Eigen::VectorXd& x, const Eigen::Vector2d& z) const {
    const double s2 = sigma_x_ * sigma_x_;
    const auto d = static_cast<double>(x.size());
    return -0.5 * (x - decode(z)).squaredNorm() / s2 - 0.5 * d * (kLog2Pi + std::log(s2));
}

// ---------------------------------------------------------------------------

LatentBounds mixture_bounds(const LatentMixture& mix, double margin_sigmas) {
    LatentBounds b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                   std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& c : mix.components) {
        b.x_lo = std::min(b.x_lo, c.mean.x());
        b.x_hi = std::max(b.x_hi, c.mean.x());
        b.y_lo = std::min(b.y_lo, c.mean.y());
        b.y_hi = std::max(b.y_hi, c.mean.y());
    }
    const double m = margin_sigmas * mix.sigma_z;
    return {b.x_lo - m, b.x_hi + m, b.y_lo - m, b.y_hi + m};
}

LatentBounds envelope_bounds(const LatentMixture& mix, double sigmas) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Vector2d second = Eigen::Vector2d::Zero();
    for (const auto& c : mix.components) {
        const double pi = mix.class_prior[c.label] * c.weight;
        mean += pi * c.mean;
        second += pi * (c.mean.array().square().matrix() + Eigen::Vector2d::Constant(mix.sigma_z * mix.sigma_z));
    }
    const Eigen::Vector2d sd = (second - mean.array().square().matrix()).cwiseSqrt();
    return {mean.x() - sigmas * sd.x(), mean.x() + sigmas * sd.x(), mean.y() - sigmas * sd.y(),
            mean.y() + sigmas * sd.y()};
}

RowMatrix lattice(const LatentBounds& bounds, Index resolution) {
    if (resolution < 2) throw Error("lattice: resolution must be at least 2");
    RowMatrix pts(resolution * resolution, 2);
    const auto last = static_cast<double>(resolution - 1);
    for (Index iy = 0; iy < resolution; ++iy) {
        const double ty = static_cast<double>(iy) / last;
        const double y = bounds.y_lo * (1.0 - ty) + bounds.y_hi * ty;
        for (Index ix = 0; ix < resolution; ++ix) {
            const double tx = static_cast<double>(ix) / last;
            pts(iy * resolution + ix, 0) = bounds.x_lo * (1.0 - tx) + bounds.x_hi * tx;
            pts(iy * resolution + ix, 1) = y;
        }
    }
    return pts;
}

GridDataset make_grid(const Decoder& dec, const LatentBounds& bounds, Index resolution) {
    GridDataset g;
    g.latents = lattice(bounds, resolution);
    g.inputs = dec.decode_batch(g.latents);
    g.resolution = resolution;
    g.bounds = bounds;
    return g;
}

QuadratureGrid::QuadratureGrid(const LatentMixture& mix, const Decoder& dec, const LatentBounds& bounds,
                               Index resolution)
    : sigma_x_(dec.sigma_x()) {
    if (resolution < 200) throw Error("quadrature: resolution must be at least 200 per axis");
    const LatentBounds need = mixture_bounds(mix, 6.0);
    constexpr double tol = 1e-12;
    if (bounds.x_lo > need.x_lo + tol || bounds.x_hi < need.x_hi - tol || bounds.y_lo > need.y_lo + tol ||
        bounds.y_hi < need.y_hi - tol)
        throw Error("quadrature: grid bounds must extend at least 6 sigma_z beyond every component mean");

    const RowMatrix pts = lattice(bounds, resolution);
    decoded_ = dec.decode_batch(pts);
    const double hx = (bounds.x_hi - bounds.x_lo) / static_cast<double>(resolution - 1);
    const double hy = (bounds.y_hi - bounds.y_lo) / static_cast<double>(resolution - 1);
    log_weight_.resize(pts.rows());
    for (Index iy = 0; iy < resolution; ++iy) {
        const double wy = (iy == 0 || iy == resolution - 1) ? 0.5 * hy : hy;
        for (Index ix = 0; ix < resolution; ++ix) {
            const double wx = (ix == 0 || ix == resolution - 1) ? 0.5 * hx : hx;
            const Index i = iy * resolution + ix;
            log_weight_[i] = std::log(wx * wy) + latent_log_density(mix, pts.row(i).transpose());
        }
    }
}

double QuadratureGrid::log_density(const Eigen::VectorXd& x) const {
    if (x.size() != decoded_.cols()) throw Error("quadrature: input dimension mismatch");
    const double s2 = sigma_x_ * sigma_x_;
    const auto d = static_cast<double>(x.size());
    const Eigen::VectorXd sq = (decoded_.rowwise() - x.transpose()).rowwise().squaredNorm();
    const Eigen::VectorXd terms = log_weight_ - 0.5 * sq / s2;
    return log_sum_exp(terms) - 0.5 * d * (kLog2Pi + std::log(s2));
}

double image_log_density_quadrature(const Eigen::VectorXd& x, const LatentMixture& mix, const Decoder& dec,
                                    const LatentBounds& bounds, Index resolution) {
    return QuadratureGrid(mix, dec, bounds, resolution).log_density(x);
}

IsEstimate image_log_density_is(const Eigen::VectorXd& x, const LatentMixture& mix, const Decoder& dec,
                                Index samples, std::uint64_t seed) {
    if (samples < 1) throw Error("importance sampling: need at least one sample");
    if (x.size() != dec.output_dim()) throw Error("importance sampling: input dimension mismatch");
    Rng rng(seed);
    RowMatrix latents(samples, 2);
    for (Index t = 0; t < samples; ++t) latents.row(t) = sample_latent(mix, rng).z.transpose();
    const RowMatrix decoded = dec.decode_batch(latents);

    const double s2 = dec.sigma_x() * dec.sigma_x();
    const auto d = static_cast<double>(x.size());
    const Eigen::VectorXd loglik = (-0.5 / s2) * (decoded.rowwise() - x.transpose()).rowwise().squaredNorm();
    const double lse = log_sum_exp(loglik);

    IsEstimate est;
    est.log_density = lse - std::log(static_cast<double>(samples)) - 0.5 * d * (kLog2Pi + std::log(s2));
    const Eigen::ArrayXd w = (loglik.array() - lse).exp();
    est.effective_sample_size = 1.0 / w.square().sum();
    est.degenerate = est.effective_sample_size < 2.0;
    return est;
}

// ---------------------------------------------------------------------------

ManifoldDataset sample_dataset(const LatentMixture& mix, const Decoder& dec, const QuadratureGrid& quadrature,
                               Index n, std::uint64_t seed) {
    if (n < 1) throw Error("sample_dataset: n must be at least 1");
    Rng rng(seed);
    ManifoldDataset ds;
    ds.seed = seed;
    ds.num_classes = mix.num_classes();
    ds.latents.resize(n, 2);
    ds.labels.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const LatentDraw draw = sample_latent(mix, rng);
        ds.latents.row(i) = draw.z.transpose();
        ds.labels[static_cast<std::size_t>(i)] = draw.label;
    }
    ds.inputs = dec.decode_batch(ds.latents);
    std::normal_distribution<double> normal;
    for (Index i = 0; i < ds.inputs.size(); ++i) ds.inputs.data()[i] += dec.sigma_x() * normal(rng);
    ds.gt_log_density.resize(n);
    for (Index i = 0; i < n; ++i) ds.gt_log_density[i] = quadrature.log_density(ds.inputs.row(i).transpose());
    return ds;
}

namespace {
constexpr std::string_view kDatasetMagic = "MMAN";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

void write_dataset(std::ostream& out, const ManifoldDataset& data) {
    io::BinaryWriter w(out);
    w.bytes(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(data.size()));
    w.u32(static_cast<std::uint32_t>(data.inputs.cols()));
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(data.num_classes));
    for (Index i = 0; i < data.latents.size(); ++i) w.f64(data.latents.data()[i]);
    for (Index i = 0; i < data.inputs.size(); ++i) w.f64(data.inputs.data()[i]);
    for (int y : data.labels) w.u8(static_cast<std::uint8_t>(y));
    w.f64s(data.gt_log_density);
    w.u64(data.seed);
}

ManifoldDataset read_dataset(std::istream& in, const std::string& source) {
    io::BinaryReader r(in, source);
    r.expect_magic(kDatasetMagic);
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion) throw FormatError(source + ": unsupported dataset version " + std::to_string(version));
    const Index n = r.u32();
    const Index d = r.u32();
    const std::uint32_t latent_dim = r.u32();
    if (latent_dim != 2) throw FormatError(source + ": latent_dim must be 2");
    ManifoldDataset ds;
    ds.num_classes = static_cast<int>(r.u32());
    ds.latents.resize(n, 2);
    for (Index i = 0; i < ds.latents.size(); ++i) ds.latents.data()[i] = r.f64();
    ds.inputs.resize(n, d);
    for (Index i = 0; i < ds.inputs.size(); ++i) ds.inputs.data()[i] = r.f64();
    for (Index i = 0; i < n; ++i) {
        const int y = r.u8();
        if (y >= ds.num_classes) throw FormatError(source + ": label outside the class set");
        ds.labels.push_back(y);
    }
    ds.gt_log_density = r.f64s(n);
    ds.seed = r.u64();
    r.expect_end();
    return ds;
}

void save_dataset(const std::filesystem::path& path, const ManifoldDataset& data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_dataset(out, data);
}

ManifoldDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return read_dataset(in, path.string());
}

// ---------------------------------------------------------------------------

SpheresDataset make_spheres(Index dim, double r_inner, double r_outer, Index n_per_sphere, std::uint64_t seed) {
    if (dim < 2) throw Error("spheres: dimension must be at least 2");
    if (!(r_inner > 0.0 && r_outer > 0.0) || r_inner == r_outer) throw Error("spheres: radii must be distinct and positive");
    if (n_per_sphere < 1) throw Error("spheres: need at least one point per sphere");
    SpheresDataset s;
    s.dim = dim;
    s.r_inner = r_inner;
    s.r_outer = r_outer;
    s.points.resize(2 * n_per_sphere, dim);
    Rng rng(seed);
    for (Index i = 0; i < 2 * n_per_sphere; ++i) {
        const bool inner = i < n_per_sphere;
        Eigen::VectorXd v = standard_normal(dim, rng);
        v *= (inner ? r_inner : r_outer) / v.norm();
        s.points.row(i) = v.transpose();
        s.labels.push_back(inner ? 1 : 0);
    }
    return s;
}

}  // namespace uqadv
