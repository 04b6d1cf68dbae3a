#include "drsl/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "drsl/common.hpp"
#include "drsl/rng.hpp"

namespace drsl {

using nlohmann::json;

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::string to_string(NoiseTag t) {
  switch (t) {
    case NoiseTag::clean: return "clean";
    case NoiseTag::closed: return "closed";
    case NoiseTag::open: return "open";
  }
  return "?";
}

std::string to_string(NoiseType t) {
  return t == NoiseType::symmetric ? "symmetric" : "asymmetric";
}

NoiseType noise_type_from_string(const std::string& s) {
  if (s == "symmetric" || s == "sym") return NoiseType::symmetric;
  if (s == "asymmetric" || s == "asym") return NoiseType::asymmetric;
  throw ConfigError("unknown noise type: " + s);
}

static Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split: " + s);
}

static NoiseTag tag_from_string(const std::string& s) {
  if (s == "clean") return NoiseTag::clean;
  if (s == "closed") return NoiseTag::closed;
  if (s == "open") return NoiseTag::open;
  throw ConfigError("unknown noise tag: " + s);
}

void CleanSource::check() const {
  const int n = size();
  if (static_cast<int>(true_label.size()) != n ||
      static_cast<int>(split.size()) != n) {
    throw ConfigError("CleanSource: field lengths disagree");
  }
  for (int i = 0; i < n; ++i) {
    if (true_label[i] < 0 || true_label[i] >= c_total) {
      throw ConfigError("CleanSource: label out of range at index " +
                        std::to_string(i));
    }
  }
}

void NoiseSpec::validate() const {
  if (known_classes < 1) throw ConfigError("NoiseSpec: known_classes must be >= 1");
  if (noise_rate < 0.0 || noise_rate > 1.0) {
    throw ConfigError("NoiseSpec: noise_rate must lie in [0,1], got " +
                      std::to_string(noise_rate));
  }
  if (noise_rate > 0.0 && known_classes < 2) {
    throw ConfigError("NoiseSpec: flipping requires at least 2 known classes");
  }
}

std::vector<int> LabeledDataset::train_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (split[i] == Split::train) out.push_back(i);
  return out;
}

std::vector<int> LabeledDataset::test_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (split[i] == Split::test) out.push_back(i);
  return out;
}

void LabeledDataset::check() const {
  const int n = size();
  if (static_cast<int>(given_label.size()) != n ||
      static_cast<int>(true_label.size()) != n ||
      static_cast<int>(tag.size()) != n ||
      static_cast<int>(split.size()) != n) {
    throw ConfigError("LabeledDataset: field lengths disagree");
  }
  for (int i = 0; i < n; ++i) {
    const bool is_open = true_label[i] >= c_known;
    if ((tag[i] == NoiseTag::open) != is_open) {
      throw ConfigError("LabeledDataset: open tag inconsistent at index " +
                        std::to_string(i));
    }
    const bool label_match = given_label[i] == true_label[i];
    if ((tag[i] == NoiseTag::clean) != label_match) {
      throw ConfigError("LabeledDataset: clean tag inconsistent at index " +
                        std::to_string(i));
    }
    if (split[i] == Split::train) {
      if (given_label[i] < 0 || given_label[i] >= c_known) {
        throw ConfigError("LabeledDataset: train given label out of range");
      }
    }
  }
}

CleanSource synth_gaussian_source(int c_total, int dim, int per_class,
                                  double separation, std::uint64_t seed) {
  if (c_total < 1) throw ConfigError("synth: c_total must be >= 1");
  if (dim < 1) throw ConfigError("synth: dim must be >= 1");
  if (per_class < 2) throw ConfigError("synth: per_class must be >= 2");
  if (!(separation > 0.0)) throw ConfigError("synth: separation must be > 0");

  auto rng = make_rng(seed, RngStream::synth);
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::MatrixXd dirs(c_total, dim);
  for (int c = 0; c < c_total; ++c)
    for (int d = 0; d < dim; ++d) dirs(c, d) = normal(rng);

  if (dim >= c_total) {
    // Gram-Schmidt: orthonormal directions give exact sqrt(2)*separation
    // spacing between every pair of cluster means.
    for (int c = 0; c < c_total; ++c) {
      for (int p = 0; p < c; ++p)
        dirs.row(c) -= dirs.row(c).dot(dirs.row(p)) * dirs.row(p);
      double nrm = dirs.row(c).norm();
      while (nrm < 1e-8) {  // degenerate draw, retry the row
        for (int d = 0; d < dim; ++d) dirs(c, d) = normal(rng);
        for (int p = 0; p < c; ++p)
          dirs.row(c) -= dirs.row(c).dot(dirs.row(p)) * dirs.row(p);
        nrm = dirs.row(c).norm();
      }
      dirs.row(c) /= nrm;
    }
  } else {
    for (int c = 0; c < c_total; ++c) dirs.row(c).normalize();
  }

  const int n_train_pc = std::max(1, static_cast<int>(std::floor(0.8 * per_class)));
  const int n_test_pc = per_class - n_train_pc;
  const int n = c_total * per_class;

  CleanSource src;
  src.c_total = c_total;
  src.features.resize(n, dim);
  src.true_label.resize(n);
  src.split.resize(n);

  int row = 0;
  for (int c = 0; c < c_total; ++c) {
    const Eigen::RowVectorXd mean = separation * dirs.row(c);
    for (int s = 0; s < per_class; ++s, ++row) {
      for (int d = 0; d < dim; ++d) {
        src.features(row, d) = static_cast<float>(mean(d) + normal(rng));
      }
      src.true_label[row] = c;
      src.split[row] = s < n_train_pc ? Split::train : Split::test;
    }
  }
  (void)n_test_pc;
  src.check();
  return src;
}

std::pair<CleanSource, CleanSource> carve_open_world(const CleanSource& source,
                                                     int c_known,
                                                     std::uint64_t seed) {
  (void)seed;  // carving is label-deterministic; seed kept for API symmetry
  source.check();
  if (c_known < 1 || c_known > source.c_total) {
    throw ConfigError("carve_open_world: known class count " +
                      std::to_string(c_known) + " outside [1," +
                      std::to_string(source.c_total) + "]");
  }

  std::vector<int> known_rows, open_rows;
  for (int i = 0; i < source.size(); ++i) {
    (source.true_label[i] < c_known ? known_rows : open_rows).push_back(i);
  }

  auto take = [&](const std::vector<int>& rows, int c_total) {
    CleanSource out;
    out.c_total = c_total;
    out.features.resize(static_cast<int>(rows.size()), source.dim());
    out.true_label.reserve(rows.size());
    out.split.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.features.row(static_cast<int>(r)) = source.features.row(rows[r]);
      out.true_label.push_back(source.true_label[rows[r]]);
      out.split.push_back(source.split[rows[r]]);
    }
    return out;
  };

  return {take(known_rows, c_known), take(open_rows, source.c_total)};
}

LabeledDataset inject_closed_noise(const CleanSource& known_pool,
                                   const NoiseSpec& spec) {
  spec.validate();
  known_pool.check();
  const int c = spec.known_classes;
  for (int lbl : known_pool.true_label) {
    if (lbl >= c)
      throw ConfigError("inject_closed_noise: pool label outside known range");
  }

  const int n = known_pool.size();
  LabeledDataset ds;
  ds.features = known_pool.features;
  ds.true_label = known_pool.true_label;
  ds.split = known_pool.split;
  ds.given_label = known_pool.true_label;
  ds.tag.assign(n, NoiseTag::clean);
  ds.c_known = c;
  ds.c_total = c;

  std::vector<int> train_rows;
  for (int i = 0; i < n; ++i)
    if (ds.split[i] == Split::train) train_rows.push_back(i);

  const int n_flip =
      static_cast<int>(std::lround(spec.noise_rate * train_rows.size()));
  auto rng = make_rng(spec.seed, RngStream::closed_noise);
  std::shuffle(train_rows.begin(), train_rows.end(), rng);

  for (int f = 0; f < n_flip; ++f) {
    const int i = train_rows[f];
    const int truth = ds.true_label[i];
    int target;
    if (spec.noise_type == NoiseType::asymmetric) {
      target = (truth + 1) % c;
    } else {
      std::uniform_int_distribution<int> pick(0, c - 2);
      target = pick(rng);
      if (target >= truth) ++target;
    }
    ds.given_label[i] = target;
    ds.tag[i] = NoiseTag::closed;
  }

  ds.spec_echo = json{{"op", "inject_closed_noise"},
                      {"known_classes", c},
                      {"noise_type", to_string(spec.noise_type)},
                      {"noise_rate", spec.noise_rate},
                      {"seed", spec.seed},
                      {"n_flipped", n_flip}};
  ds.check();
  return ds;
}

LabeledDataset inject_open_noise(const LabeledDataset& known,
                                 const CleanSource& open_pool,
                                 int target_train_size, std::uint64_t seed) {
  known.check();
  const int c = known.c_known;
  const int n_known_train = static_cast<int>(known.train_indices().size());

  if (open_pool.size() == 0) {
    if (target_train_size != n_known_train) {
      throw ConfigError(
          "inject_open_noise: open pool is empty but target_train_size " +
          std::to_string(target_train_size) + " != known train size " +
          std::to_string(n_known_train));
    }
    LabeledDataset out = known;
    out.spec_echo = json{{"closed", known.spec_echo}, {"op", "lcnd_identity"}};
    return out;
  }

  for (int lbl : open_pool.true_label) {
    if (lbl < c)
      throw ConfigError("inject_open_noise: open pool label below known range");
  }

  std::vector<int> open_train, open_test;
  for (int i = 0; i < open_pool.size(); ++i) {
    (open_pool.split[i] == Split::train ? open_train : open_test).push_back(i);
  }

  const int needed = target_train_size - n_known_train;
  if (needed < 0) {
    throw ConfigError("inject_open_noise: target_train_size smaller than the "
                      "known train split");
  }
  if (needed > static_cast<int>(open_train.size())) {
    throw ConfigError("inject_open_noise: open pool has only " +
                      std::to_string(open_train.size()) +
                      " train samples, need " + std::to_string(needed));
  }

  auto rng = make_rng(seed, RngStream::open_noise);
  std::shuffle(open_train.begin(), open_train.end(), rng);
  open_train.resize(needed);
  std::sort(open_train.begin(), open_train.end());

  const int n_out = known.size() + needed + static_cast<int>(open_test.size());
  LabeledDataset ds;
  ds.c_known = c;
  ds.c_total = open_pool.c_total;
  ds.features.resize(n_out, known.dim());
  ds.given_label.reserve(n_out);
  ds.true_label.reserve(n_out);
  ds.tag.reserve(n_out);
  ds.split.reserve(n_out);

  int row = 0;
  for (int i = 0; i < known.size(); ++i, ++row) {
    ds.features.row(row) = known.features.row(i);
    ds.given_label.push_back(known.given_label[i]);
    ds.true_label.push_back(known.true_label[i]);
    ds.tag.push_back(known.tag[i]);
    ds.split.push_back(known.split[i]);
  }
  std::uniform_int_distribution<int> pick(0, c - 1);
  for (int i : open_train) {
    ds.features.row(row++) = open_pool.features.row(i);
    ds.given_label.push_back(pick(rng));
    ds.true_label.push_back(open_pool.true_label[i]);
    ds.tag.push_back(NoiseTag::open);
    ds.split.push_back(Split::train);
  }
  for (int i : open_test) {
    ds.features.row(row++) = open_pool.features.row(i);
    ds.given_label.push_back(-1);  // no valid known-class label at test time
    ds.true_label.push_back(open_pool.true_label[i]);
    ds.tag.push_back(NoiseTag::open);
    ds.split.push_back(Split::test);
  }

  ds.spec_echo = json{{"closed", known.spec_echo},
                      {"op", "inject_open_noise"},
                      {"target_train_size", target_train_size},
                      {"n_open_train", needed},
                      {"n_open_test", open_test.size()},
                      {"seed", seed}};
  ds.check();
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open for writing: " + path);

  const int n = ds.size();
  const int dim = ds.dim();
  const std::uint64_t feature_bytes =
      static_cast<std::uint64_t>(n) * dim * sizeof(float);

  int n_train = 0, n_test = 0;
  for (auto s : ds.split) (s == Split::train ? n_train : n_test)++;

  json header{{"format", "drsl-dataset"}, {"version", 1},
              {"c_known", ds.c_known},   {"c_total", ds.c_total},
              {"dim", dim},              {"n_samples", n},
              {"n_train", n_train},      {"n_test", n_test},
              {"feature_bytes", feature_bytes},
              {"spec", ds.spec_echo}};
  os << header.dump() << "\n";

  std::vector<float> rowbuf(dim);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) rowbuf[d] = ds.features(i, d);
    os.write(reinterpret_cast<const char*>(rowbuf.data()),
             static_cast<std::streamsize>(dim * sizeof(float)));
  }

  for (int i = 0; i < n; ++i) {
    json rec{{"index", i},
             {"given_label", ds.given_label[i]},
             {"true_label", ds.true_label[i]},
             {"noise_tag", to_string(ds.tag[i])},
             {"split", to_string(ds.split[i])}};
    os << rec.dump() << "\n";
  }
  if (!os) throw ConfigError("write failed: " + path);
}

LabeledDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open dataset: " + path);

  std::string line;
  if (!std::getline(is, line)) throw ConfigError("dataset header missing: " + path);
  json header = json::parse(line);
  if (header.value("format", "") != "drsl-dataset") {
    throw ConfigError("not a drsl dataset file: " + path);
  }

  const int n = header.at("n_samples").get<int>();
  const int dim = header.at("dim").get<int>();
  const std::uint64_t feature_bytes = header.at("feature_bytes").get<std::uint64_t>();
  if (feature_bytes != static_cast<std::uint64_t>(n) * dim * sizeof(float)) {
    throw ConfigError("dataset feature block size mismatch: " + path);
  }

  LabeledDataset ds;
  ds.c_known = header.at("c_known").get<int>();
  ds.c_total = header.at("c_total").get<int>();
  ds.spec_echo = header.value("spec", json::object());
  ds.features.resize(n, dim);
  ds.given_label.resize(n);
  ds.true_label.resize(n);
  ds.tag.resize(n);
  ds.split.resize(n);

  std::vector<float> rowbuf(dim);
  for (int i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(rowbuf.data()),
            static_cast<std::streamsize>(dim * sizeof(float)));
    if (!is) throw ConfigError("truncated feature block: " + path);
    for (int d = 0; d < dim; ++d) ds.features(i, d) = rowbuf[d];
  }

  int seen = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    const int i = rec.at("index").get<int>();
    if (i < 0 || i >= n) throw ConfigError("record index out of range: " + path);
    ds.given_label[i] = rec.at("given_label").get<int>();
    ds.true_label[i] = rec.at("true_label").get<int>();
    ds.tag[i] = tag_from_string(rec.at("noise_tag").get<std::string>());
    ds.split[i] = split_from_string(rec.at("split").get<std::string>());
    ++seen;
  }
  if (seen != n) {
    throw ConfigError("dataset has " + std::to_string(seen) + " records, "
                      "expected " + std::to_string(n) + ": " + path);
  }
  ds.check();
  return ds;
}

}  // namespace drsl
