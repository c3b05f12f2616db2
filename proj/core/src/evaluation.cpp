#include "defsynth/evaluation.hpp"

#include "defsynth/autodiff.hpp"
#include "defsynth/imageio.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace defsynth::eval {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kEigTolerance = 1e-6;

Eigen::Map<const RowMat> as_matrix(const Tensor& t, int64_t rows, int64_t cols) {
  return Eigen::Map<const RowMat>(t.data(), rows, cols);
}

/// Eigendecomposes a symmetric PSD matrix and clips slightly negative
/// eigenvalues; genuinely negative ones are an error.
void psd_eigen(const RowMat& m, const std::string& what, Eigen::MatrixXd* vectors,
               Eigen::VectorXd* values) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("frechet_distance: eigendecomposition of " + what +
                             " did not converge");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -kEigTolerance)
      throw std::runtime_error("frechet_distance: " + what + " has eigenvalue " +
                               std::to_string(ev[i]) +
                               " below tolerance; not positive semidefinite");
    ev[i] = std::max(ev[i], 0.0);
  }
  *vectors = es.eigenvectors();
  *values = std::move(ev);
}

}  // namespace

void GaussianStats::validate() const {
  if (!mean.defined() || !covariance.defined())
    throw std::invalid_argument("GaussianStats: undefined tensors");
  int64_t k = mean.numel();
  if (covariance.shape() != std::vector<int64_t>{k, k})
    throw std::invalid_argument("GaussianStats: covariance must be " + std::to_string(k) +
                                "x" + std::to_string(k));
  if (count < 2) throw std::invalid_argument("GaussianStats: need at least 2 samples");
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = i + 1; j < k; ++j)
      if (std::abs(covariance.at(i * k + j) - covariance.at(j * k + i)) > 1e-8)
        throw std::invalid_argument("GaussianStats: covariance is not symmetric");
}

StatsAccumulator::StatsAccumulator(int64_t dim) : dim_(dim) {
  if (dim <= 0) throw std::invalid_argument("StatsAccumulator: dimension must be positive");
  mean_ = Tensor::zeros({dim});
  m2_ = Tensor::zeros({dim, dim});
}

void StatsAccumulator::add(const Tensor& embedding) {
  if (embedding.numel() != dim_)
    throw std::invalid_argument("StatsAccumulator: embedding has " +
                                std::to_string(embedding.numel()) + " values, expected " +
                                std::to_string(dim_));
  ++count_;
  const double* x = embedding.data();
  double* mu = mean_.data();
  double* m2 = m2_.data();
  std::vector<double> before(static_cast<size_t>(dim_));
  for (int64_t i = 0; i < dim_; ++i) {
    before[static_cast<size_t>(i)] = x[i] - mu[i];
    mu[i] += before[static_cast<size_t>(i)] / static_cast<double>(count_);
  }
  for (int64_t i = 0; i < dim_; ++i) {
    double after_i = x[i] - mu[i];
    for (int64_t j = 0; j < dim_; ++j) m2[i * dim_ + j] += after_i * before[static_cast<size_t>(j)];
  }
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  if (other.dim_ != dim_)
    throw std::invalid_argument("StatsAccumulator: merging different dimensions");
  if (other.count_ == 0) return;
  if (count_ == 0) {
    count_ = other.count_;
    mean_ = other.mean_.clone();
    m2_ = other.m2_.clone();
    return;
  }
  const int64_t na = count_, nb = other.count_, n = na + nb;
  const double* mb = other.mean_.data();
  double* mu = mean_.data();
  double* m2 = m2_.data();
  const double* b2 = other.m2_.data();
  std::vector<double> delta(static_cast<size_t>(dim_));
  for (int64_t i = 0; i < dim_; ++i) delta[static_cast<size_t>(i)] = mb[i] - mu[i];
  const double w = static_cast<double>(na) * static_cast<double>(nb) / static_cast<double>(n);
  for (int64_t i = 0; i < dim_; ++i)
    for (int64_t j = 0; j < dim_; ++j)
      m2[i * dim_ + j] += b2[i * dim_ + j] +
                          w * delta[static_cast<size_t>(i)] * delta[static_cast<size_t>(j)];
  for (int64_t i = 0; i < dim_; ++i)
    mu[i] += delta[static_cast<size_t>(i)] * static_cast<double>(nb) / static_cast<double>(n);
  count_ = n;
}

GaussianStats StatsAccumulator::finalize() const {
  if (count_ < 2)
    throw std::invalid_argument("StatsAccumulator: need at least 2 samples, have " +
                                std::to_string(count_));
  GaussianStats stats;
  stats.mean = mean_.clone();
  stats.covariance = Tensor::zeros({dim_, dim_});
  const double* m2 = m2_.data();
  double* cov = stats.covariance.data();
  const double denom = static_cast<double>(count_ - 1);
  for (int64_t i = 0; i < dim_; ++i)
    for (int64_t j = 0; j < dim_; ++j)
      cov[i * dim_ + j] = 0.5 * (m2[i * dim_ + j] + m2[j * dim_ + i]) / denom;
  stats.count = count_;
  return stats;
}

GaussianStats compute_stats(const std::vector<Tensor>& embeddings) {
  if (embeddings.size() < 2)
    throw std::invalid_argument("compute_stats: need at least 2 embeddings");
  StatsAccumulator acc(embeddings.front().numel());
  for (const Tensor& e : embeddings) acc.add(e);
  return acc.finalize();
}

GaussianStats compute_image_stats(const std::vector<Tensor>& images, const Embedder& embed) {
  if (images.size() < 2)
    throw std::invalid_argument("compute_image_stats: need at least 2 images");
  StatsAccumulator acc(embed.dim);
  for (const Tensor& im : images) acc.add(embed.map(im));
  return acc.finalize();
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  a.validate();
  b.validate();
  const int64_t k = a.dim();
  if (b.dim() != k)
    throw std::invalid_argument("frechet_distance: dimension mismatch (" + std::to_string(k) +
                                " vs " + std::to_string(b.dim()) + ")");

  Eigen::MatrixXd sa = as_matrix(a.covariance, k, k);
  Eigen::MatrixXd sb = as_matrix(b.covariance, k, k);

  Eigen::MatrixXd va;
  Eigen::VectorXd da;
  psd_eigen(sa, "first covariance", &va, &da);
  Eigen::MatrixXd sqrt_a =
      va * da.array().sqrt().matrix().asDiagonal() * va.transpose();

  Eigen::MatrixXd product = sqrt_a * sb * sqrt_a;
  product = 0.5 * (product + product.transpose().eval());
  Eigen::MatrixXd vp;
  Eigen::VectorXd dp;
  psd_eigen(product, "covariance product", &vp, &dp);
  double trace_sqrt = dp.array().sqrt().sum();

  double mean_term = 0.0;
  for (int64_t i = 0; i < k; ++i) {
    double d = a.mean.at(i) - b.mean.at(i);
    mean_term += d * d;
  }
  double value = mean_term + sa.trace() + sb.trace() - 2.0 * trace_sqrt;
  return std::max(value, 0.0);
}

double split_fid(const std::vector<Tensor>& images, const Embedder& embed,
                 const std::vector<size_t>& first, const std::vector<size_t>& second) {
  if (first.size() < 2 || second.size() < 2)
    throw std::invalid_argument("split_fid: each half needs at least 2 images");
  auto stats_of = [&](const std::vector<size_t>& idx) {
    StatsAccumulator acc(embed.dim);
    for (size_t i : idx) acc.add(embed.map(images.at(i)));
    return acc.finalize();
  };
  return frechet_distance(stats_of(first), stats_of(second));
}

double ideal_split_fid(const std::vector<Tensor>& images, const Embedder& embed,
                       uint64_t seed) {
  if (images.size() < 4)
    throw std::invalid_argument("ideal_split_fid: need at least 4 images");
  std::vector<size_t> order(images.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  size_t half = order.size() / 2;
  std::vector<size_t> first(order.begin(), order.begin() + static_cast<int64_t>(half));
  std::vector<size_t> second(order.begin() + static_cast<int64_t>(half), order.end());
  return split_fid(images, embed, first, second);
}

Embedder pixel_pca_embedder(const std::vector<Tensor>& reference, int64_t dim) {
  if (reference.size() < 2)
    throw std::invalid_argument("pixel_pca_embedder: need at least 2 reference images");
  const std::vector<int64_t> shape = reference.front().shape();
  const int64_t d = reference.front().numel();
  const int64_t n = static_cast<int64_t>(reference.size());
  if (dim < 1 || dim > std::min(d, n))
    throw std::invalid_argument("pixel_pca_embedder: dimension must lie in [1, min(pixels, "
                                "samples)]");
  for (const Tensor& im : reference)
    if (im.shape() != shape)
      throw std::invalid_argument("pixel_pca_embedder: reference images differ in shape");

  Eigen::MatrixXd x(n, d);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) x(i, j) = reference[static_cast<size_t>(i)].at(j);
  Eigen::VectorXd mu = x.colwise().mean();
  x.rowwise() -= mu.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  Eigen::MatrixXd basis = svd.matrixV().leftCols(dim);
  // Canonical sign: the largest-magnitude coefficient of each component is
  // positive, so the projection does not depend on solver sign conventions.
  for (int64_t c = 0; c < dim; ++c) {
    Eigen::Index at = 0;
    basis.col(c).cwiseAbs().maxCoeff(&at);
    if (basis(at, c) < 0) basis.col(c) = -basis.col(c);
  }

  Embedder e;
  e.id = "pixel_pca";
  e.dim = dim;
  e.map = [shape, d, dim, mu, basis](const Tensor& image) {
    if (image.shape() != shape)
      throw std::invalid_argument("pixel_pca embedder: image shape differs from the fit set");
    Eigen::VectorXd v(d);
    for (int64_t j = 0; j < d; ++j) v[j] = image.at(j);
    Eigen::VectorXd y = basis.transpose() * (v - mu);
    Tensor out = Tensor::zeros({dim});
    for (int64_t j = 0; j < dim; ++j) out.at(j) = y[j];
    return out;
  };
  return e;
}

Embedder make_embedder(const std::string& id, const std::vector<Tensor>& reference,
                       int64_t dim) {
  if (id == "pixel_pca") return pixel_pca_embedder(reference, dim);
  if (id == "inception_v3")
    throw std::runtime_error("embedder 'inception_v3' has no bundled weights; use pixel_pca "
                             "or supply a feature extractor");
  throw std::invalid_argument("unknown embedder '" + id + "'");
}

namespace {

Tensor slice_sample(const Tensor& batch, int64_t index) {
  const int64_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Tensor out = Tensor::zeros({c, h, w});
  std::memcpy(out.data(), batch.data() + index * c * h * w,
              static_cast<size_t>(c * h * w) * sizeof(double));
  return out;
}

data::LabelVector label_from_control(const ctrl::AttributeControlMap& map) {
  data::LabelVector label;
  const int64_t hw = map.height() * map.width();
  for (int64_t c = 0; c < map.channels(); ++c)
    for (int64_t i = 0; i < hw; ++i)
      if (map.values.at(c * hw + i) > 0.0) {
        label.bits[static_cast<size_t>(c)] = 1;
        break;
      }
  if (label.is_normal() || label == data::LabelVector{})
    throw std::invalid_argument("generate_corpus: control map paints no defect category");
  label.validate();
  return label;
}

}  // namespace

data::DatasetManifest generate_corpus(const gan::Generator& generator,
                                      const data::DatasetManifest& normal_manifest,
                                      const CorpusRequest& request,
                                      const std::filesystem::path& out_root, uint64_t seed) {
  if (request.count <= 0)
    throw std::invalid_argument("generate_corpus: count must be positive");
  const int64_t size = generator.config().image_size;

  std::vector<const data::SampleRecord*> pool;
  for (const data::SampleRecord& rec : normal_manifest.records)
    if (rec.label.is_normal()) pool.push_back(&rec);
  if (pool.empty())
    throw std::invalid_argument("generate_corpus: the normal pool is empty");

  Tensor batched_control;
  data::LabelVector fixed_label;
  if (request.control) {
    request.control->validate();
    if (request.control->channels() != data::kNumCategories ||
        request.control->height() != size || request.control->width() != size)
      throw std::invalid_argument(
          "generate_corpus: control map does not match the generator (" +
          std::to_string(size) + "x" + std::to_string(size) + ", " +
          std::to_string(data::kNumCategories) + " channels)");
    fixed_label = label_from_control(*request.control);
    batched_control = request.control->batch(1);
  }
  std::function<data::LabelVector(std::mt19937_64&)> sample_label = request.category_sampler;
  if (!sample_label)
    sample_label = [](std::mt19937_64& rng) {
      std::uniform_int_distribution<int64_t> pick(0, data::kNumCategories - 2);
      return data::LabelVector::single(pick(rng));
    };

  std::filesystem::create_directories(out_root / "images" / "synthetic");
  std::filesystem::create_directories(out_root / "blends");
  if (request.with_restorations)
    std::filesystem::create_directories(out_root / "images" / "restored");

  std::ofstream index(out_root / data::split_index_file(data::Split::train),
                      std::ios::trunc);
  if (!index)
    throw std::runtime_error("generate_corpus: cannot write index under " +
                             out_root.string());
  index << "path,labels,source\n";

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick_normal(0, pool.size() - 1);
  std::unordered_map<const data::SampleRecord*, Tensor> cache;

  ad::NoGradGuard guard;
  for (int64_t i = 0; i < request.count; ++i) {
    const data::SampleRecord* src = pool[pick_normal(rng)];
    data::LabelVector label = request.control ? fixed_label : sample_label(rng);
    uint64_t deface_seed = rng();
    uint64_t restore_seed = rng();

    auto it = cache.find(src);
    if (it == cache.end()) {
      Tensor raw = img::read_image_rgb(src->path);
      if (raw.dim(1) != size || raw.dim(2) != size)
        throw std::runtime_error("generate_corpus: generator expects " + std::to_string(size) +
                                 "x" + std::to_string(size) + " inputs but " + src->path +
                                 " is " + std::to_string(raw.dim(1)) + "x" +
                                 std::to_string(raw.dim(2)));
      it = cache.emplace(src, img::normalize(raw)).first;
    }
    Tensor normal = Tensor::zeros({1, 3, size, size});
    std::memcpy(normal.data(), it->second.data(),
                static_cast<size_t>(it->second.numel()) * sizeof(double));

    Tensor control = request.control
                         ? batched_control
                         : ctrl::repeat_label(label, size, size).batch(1);
    gan::TranslationResult defaced =
        generator.deface(ad::constant(normal), control, deface_seed);

    std::string synth_rel = "images/synthetic/" + std::to_string(i) + ".png";
    img::write_image_rgb((out_root / synth_rel).string(),
                         img::denormalize(slice_sample(defaced.image.value(), 0)));
    Tensor blend = slice_sample(defaced.blend.value(), 0);
    for (int64_t p = 0; p < blend.numel(); ++p) blend.at(p) *= 255.0;
    img::write_image_gray((out_root / "blends" / (std::to_string(i) + ".png")).string(),
                          blend);
    index << synth_rel << ',' << label.to_names() << ','
          << data::source_name(data::Source::synthetic) << '\n';

    if (request.with_restorations) {
      gan::TranslationResult restored =
          generator.restore(ad::constant(defaced.image.value()), restore_seed);
      std::string rest_rel = "images/restored/" + std::to_string(i) + ".png";
      img::write_image_rgb((out_root / rest_rel).string(),
                           img::denormalize(slice_sample(restored.image.value(), 0)));
      index << rest_rel << ',' << data::LabelVector::normal().to_names() << ','
            << data::source_name(data::Source::restored) << '\n';
    }
  }
  index.close();
  return data::load_manifest(out_root.string(), data::Split::train);
}

}  // namespace defsynth::eval
