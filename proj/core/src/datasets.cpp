#include "revdist/datasets.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "revdist/error.hpp"
#include "revdist/seed.hpp"

namespace revdist {
namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int iris_class(const std::string& name) {
  static const std::map<std::string, int> kClasses = {
      {"Iris-setosa", 0},     {"setosa", 0},     {"Iris-versicolor", 1},
      {"versicolor", 1},      {"Iris-virginica", 2}, {"virginica", 2},
  };
  const auto it = kClasses.find(name);
  return it == kClasses.end() ? -1 : it->second;
}

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::data_not_found, "cannot open " + path.string());
  return in;
}

std::uint32_t read_be32(std::ifstream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4))
    throw Error(ErrorKind::truncated, "truncated IDX header in " + path.string());
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void check_magic(std::uint32_t got, std::uint32_t want,
                 const std::filesystem::path& path) {
  if (got != want) {
    std::ostringstream os;
    os << path.string() << ": magic " << got << ", expected " << want;
    throw Error(ErrorKind::wrong_magic, os.str());
  }
}

}  // namespace

void Dataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw Error(ErrorKind::schema, "dataset row count differs from label count");
  if (labels.empty()) throw Error(ErrorKind::schema, "dataset is empty");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= n_classes)
      throw Error(ErrorKind::schema, "label out of range");
  if (features.hasNaN()) throw Error(ErrorKind::schema, "NaN feature");
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.features.resize(static_cast<long>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<long>(i)) = features.row(static_cast<long>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
  }
  out.n_classes = n_classes;
  out.name = name;
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> rows(std::min(n, size()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return subset(rows);
}

Eigen::MatrixXd normalize_min_max(const Eigen::MatrixXd& features) {
  Eigen::MatrixXd out = features;
  for (long j = 0; j < out.cols(); ++j) {
    const double lo = out.col(j).minCoeff();
    const double hi = out.col(j).maxCoeff();
    const double span = hi - lo;
    if (span > 0.0)
      out.col(j) = (out.col(j).array() - lo) / span;
    else
      out.col(j).setZero();
  }
  return out;
}

Dataset load_iris(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::data_not_found, "cannot open " + path.string());
  std::vector<std::array<double, 4>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(trim(line));
    std::array<double, 4> row{};
    bool numeric = fields.size() == 5;
    for (std::size_t j = 0; numeric && j < 4; ++j)
      numeric = parse_double(fields[j], row[j]);
    if (!numeric) {
      if (rows.empty() && labels.empty() && line_no == 1) continue;  // header
      std::ostringstream os;
      os << path.string() << ":" << line_no << ": malformed row";
      throw Error(ErrorKind::parse, os.str());
    }
    const int cls = iris_class(fields[4]);
    if (cls < 0) {
      std::ostringstream os;
      os << path.string() << ":" << line_no << ": unknown class '" << fields[4]
         << "'";
      throw Error(ErrorKind::schema, os.str());
    }
    rows.push_back(row);
    labels.push_back(cls);
  }
  if (rows.empty())
    throw Error(ErrorKind::parse, path.string() + ": no data rows");

  Eigen::MatrixXd raw(static_cast<long>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (long j = 0; j < 4; ++j)
      raw(static_cast<long>(i), j) = rows[i][static_cast<std::size_t>(j)];

  Dataset ds;
  ds.features = normalize_min_max(raw);
  ds.labels = std::move(labels);
  ds.n_classes = 3;
  ds.name = "iris";
  ds.validate();
  return ds;
}

Dataset load_mnist(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path) {
  auto images = open_binary(images_path);
  auto labels = open_binary(labels_path);

  check_magic(read_be32(images, images_path), kImagesMagic, images_path);
  const std::uint32_t n_images = read_be32(images, images_path);
  const std::uint32_t rows = read_be32(images, images_path);
  const std::uint32_t cols = read_be32(images, images_path);

  check_magic(read_be32(labels, labels_path), kLabelsMagic, labels_path);
  const std::uint32_t n_labels = read_be32(labels, labels_path);

  if (n_images != n_labels) {
    std::ostringstream os;
    os << "MNIST count mismatch: " << n_images << " images, " << n_labels
       << " labels";
    throw Error(ErrorKind::count_mismatch, os.str());
  }

  const std::size_t d = std::size_t{rows} * cols;
  std::vector<unsigned char> pixels(std::size_t{n_images} * d);
  if (!images.read(reinterpret_cast<char*>(pixels.data()),
                   static_cast<std::streamsize>(pixels.size())))
    throw Error(ErrorKind::truncated,
                "truncated image payload in " + images_path.string());
  std::vector<unsigned char> raw_labels(n_labels);
  if (!labels.read(reinterpret_cast<char*>(raw_labels.data()),
                   static_cast<std::streamsize>(raw_labels.size())))
    throw Error(ErrorKind::truncated,
                "truncated label payload in " + labels_path.string());

  Dataset ds;
  ds.features.resize(static_cast<long>(n_images), static_cast<long>(d));
  for (std::size_t i = 0; i < n_images; ++i)
    for (std::size_t j = 0; j < d; ++j)
      ds.features(static_cast<long>(i), static_cast<long>(j)) =
          static_cast<double>(pixels[i * d + j]) / 255.0;
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  ds.n_classes = 10;
  ds.name = "mnist";
  ds.validate();
  return ds;
}

TrainTestSplit split_train_test(const Dataset& ds, double test_fraction,
                                std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw Error(ErrorKind::invalid_argument, "test_fraction must be in [0, 1)");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, "split");
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(ds.size())));
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<long>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<long>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {ds.subset(train), ds.subset(test)};
}

TriggerSpec TriggerSpec::random(std::size_t dim, double noise_ratio,
                                int target_label, TriggerMode mode,
                                std::uint64_t seed) {
  TriggerSpec t;
  t.pattern.resize(static_cast<long>(dim));
  Rng rng = make_rng(seed, "trigger-pattern");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (long i = 0; i < t.pattern.size(); ++i) t.pattern(i) = u01(rng);
  t.noise_ratio = noise_ratio;
  t.target_label = target_label;
  t.mode = mode;
  t.seed = seed;
  return t;
}

TriggerSpec TriggerSpec::with_noise_ratio(double rho) const {
  TriggerSpec t = *this;
  t.noise_ratio = rho;
  return t;
}

void TriggerSpec::validate(std::size_t dim) const {
  if (static_cast<std::size_t>(pattern.size()) != dim)
    throw Error(ErrorKind::structural, "trigger pattern dimension mismatch");
  if (!(noise_ratio >= 0.0 && noise_ratio <= 1.0))
    throw Error(ErrorKind::invalid_argument, "noise ratio must lie in [0, 1]");
  if (target_label < 0)
    throw Error(ErrorKind::invalid_argument, "negative target label");
}

TriggerSpec select_trigger(const Dataset& ds, double noise_ratio, int target_label,
                           TriggerMode mode, std::uint64_t seed,
                           std::size_t candidates, std::size_t max_rows) {
  if (candidates == 0)
    throw Error(ErrorKind::invalid_argument, "select_trigger needs candidates >= 1");
  if (candidates == 1)
    return TriggerSpec::random(ds.dim(), noise_ratio, target_label, mode, seed);
  std::vector<long> sources, clean;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const long r = static_cast<long>(i);
    if (ds.labels[i] != target_label && sources.size() < max_rows) sources.push_back(r);
    if (clean.size() < max_rows) clean.push_back(r);
  }
  if (sources.empty())
    throw Error(ErrorKind::invalid_argument, "select_trigger: no non-target rows");
  Eigen::MatrixXd reference(static_cast<long>(clean.size()), ds.features.cols());
  for (std::size_t i = 0; i < clean.size(); ++i)
    reference.row(static_cast<long>(i)) = ds.features.row(clean[i]);
  const Eigen::VectorXd ref_sq = reference.rowwise().squaredNorm();

  TriggerSpec best;
  double best_score = -1.0;
  for (std::size_t c = 0; c < candidates; ++c) {
    const TriggerSpec t = TriggerSpec::random(
        ds.dim(), noise_ratio, target_label, mode, derive_seed(seed, "trigger-candidate", c));
    std::vector<double> nearest;
    nearest.reserve(sources.size());
    for (long r : sources) {
      const Eigen::VectorXd x = apply_trigger(ds.features.row(r).transpose(), t);
      const Eigen::VectorXd d2 = ref_sq - 2.0 * reference * x +
                                 Eigen::VectorXd::Constant(ref_sq.size(), x.squaredNorm());
      nearest.push_back(std::sqrt(std::max(d2.minCoeff(), 0.0)));
    }
    const auto k = nearest.size() / 10;
    std::nth_element(nearest.begin(), nearest.begin() + static_cast<long>(k), nearest.end());
    const double score = nearest[k];
    if (score > best_score) {
      best_score = score;
      best = t;
    }
  }
  return best;
}

Eigen::VectorXd apply_trigger(const Eigen::VectorXd& x, const TriggerSpec& t) {
  t.validate(static_cast<std::size_t>(x.size()));
  if (t.noise_ratio == 0.0) return x;
  Eigen::VectorXd out;
  if (t.mode == TriggerMode::blend) {
    out = (1.0 - t.noise_ratio) * x + t.noise_ratio * t.pattern;
  } else {
    out = x;
    std::vector<long> perm(static_cast<std::size_t>(x.size()));
    std::iota(perm.begin(), perm.end(), 0L);
    Rng rng = make_rng(t.seed, "trigger-patch");
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto covered = static_cast<std::size_t>(
        std::ceil(t.noise_ratio * static_cast<double>(x.size()) - 1e-12));
    for (std::size_t i = 0; i < covered; ++i) out(perm[i]) = t.pattern(perm[i]);
  }
  return out.cwiseMax(0.0).cwiseMin(1.0);
}

Eigen::MatrixXd apply_trigger_rows(const Eigen::MatrixXd& x,
                                   const TriggerSpec& t) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (long i = 0; i < x.rows(); ++i)
    out.row(i) = apply_trigger(x.row(i).transpose(), t).transpose();
  return out;
}

std::vector<std::size_t> poison_indices(std::size_t n, double fraction,
                                        std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw Error(ErrorKind::invalid_argument, "poison fraction must lie in [0, 1]");
  const auto count = std::min<std::size_t>(
      n, static_cast<std::size_t>(
             std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, "poison");
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Dataset poison(const Dataset& ds, const TriggerSpec& t, double fraction) {
  Dataset out = ds;
  for (std::size_t i : poison_indices(ds.size(), fraction, t.seed)) {
    const long r = static_cast<long>(i);
    out.features.row(r) =
        apply_trigger(ds.features.row(r).transpose(), t).transpose();
    out.labels[i] = t.target_label;
  }
  return out;
}

std::string_view to_string(TriggerMode mode) noexcept {
  return mode == TriggerMode::blend ? "blend" : "patch";
}

TriggerMode trigger_mode_from_string(std::string_view s) {
  if (s == "blend") return TriggerMode::blend;
  if (s == "patch") return TriggerMode::patch;
  throw Error(ErrorKind::usage, "unknown trigger mode '" + std::string(s) + "'");
}

Json to_json(const Dataset& ds) {
  Json j = Json::object();
  j["name"] = ds.name;
  j["n_classes"] = ds.n_classes;
  j["rows"] = ds.features.rows();
  j["cols"] = ds.features.cols();
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(ds.features.size()));
  for (long i = 0; i < ds.features.rows(); ++i)
    for (long k = 0; k < ds.features.cols(); ++k) flat.push_back(ds.features(i, k));
  j["features"] = std::move(flat);
  j["labels"] = ds.labels;
  return j;
}

Dataset dataset_from_json(const Json& j) {
  Dataset ds;
  ds.name = j.at("name").get<std::string>();
  ds.n_classes = j.at("n_classes").get<std::size_t>();
  const long rows = j.at("rows").get<long>();
  const long cols = j.at("cols").get<long>();
  const auto flat = j.at("features").get<std::vector<double>>();
  if (flat.size() != static_cast<std::size_t>(rows * cols))
    throw Error(ErrorKind::schema, "dataset snapshot: feature count mismatch");
  ds.features.resize(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long k = 0; k < cols; ++k)
      ds.features(i, k) = flat[static_cast<std::size_t>(i * cols + k)];
  ds.labels = j.at("labels").get<std::vector<int>>();
  ds.validate();
  return ds;
}

Json to_json(const TriggerSpec& t) {
  Json j = Json::object();
  j["pattern"] = std::vector<double>(t.pattern.data(),
                                     t.pattern.data() + t.pattern.size());
  j["noise_ratio"] = t.noise_ratio;
  j["target_label"] = t.target_label;
  j["mode"] = std::string(to_string(t.mode));
  j["seed"] = t.seed;
  return j;
}

TriggerSpec trigger_from_json(const Json& j) {
  TriggerSpec t;
  const auto p = j.at("pattern").get<std::vector<double>>();
  t.pattern = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<long>(p.size()));
  t.noise_ratio = j.at("noise_ratio").get<double>();
  t.target_label = j.at("target_label").get<int>();
  t.mode = trigger_mode_from_string(j.at("mode").get<std::string>());
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

}  // namespace revdist
