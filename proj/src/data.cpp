#include "deepkkl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "deepkkl/errors.hpp"
#include "deepkkl/text_io.hpp"

namespace dkkl {

namespace {

constexpr Split kSplits[] = {Split::train, Split::val, Split::test};

std::optional<Split> parse_split(std::string_view name) {
  for (Split s : kSplits) {
    if (split_name(s) == name) return s;
  }
  return std::nullopt;
}

std::string expected_header(int n, bool with_states) {
  std::string header = "split,traj_id,step,t,y";
  if (with_states) {
    for (int i = 1; i <= n; ++i) header += ",x" + std::to_string(i);
  }
  return header;
}

std::string column_name(std::size_t index) {
  static const char* fixed[] = {"split", "traj_id", "step", "t", "y"};
  if (index < 5) return fixed[index];
  return "x" + std::to_string(index - 4);
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw SchemaError("metadata is missing key '" + key + "'");
  return it->second;
}

double require_double(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto v = parse_double(require(kv, key));
  if (!v) throw SchemaError("metadata key '" + key + "' is not a number");
  return *v;
}

long long require_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto v = parse_integer(require(kv, key));
  if (!v) throw SchemaError("metadata key '" + key + "' is not an integer");
  return *v;
}

}  // namespace

Scaler Scaler::fit(const std::vector<double>& values) {
  if (values.empty()) throw DegenerateScaleError("cannot fit a scaler on no data");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!(*hi > *lo)) throw DegenerateScaleError("training outputs are constant; scale is undefined");
  return Scaler{*lo, *hi};
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "";
}

const std::vector<Record>& Dataset::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  throw std::invalid_argument("bad split");
}

std::vector<Record>& Dataset::split(Split s) {
  return const_cast<std::vector<Record>&>(std::as_const(*this).split(s));
}

SplitCounts Dataset::counts() const {
  return SplitCounts{static_cast<int>(train.size()), static_cast<int>(val.size()),
                     static_cast<int>(test.size())};
}

Dataset generate(const SystemSpec& spec, SplitCounts counts, int length, std::uint64_t seed) {
  spec.validate();
  if (counts.train <= 0 || counts.val <= 0 || counts.test <= 0) {
    throw std::invalid_argument("split counts must be positive");
  }
  if (length < 1) throw std::invalid_argument("trajectory length must be positive");

  Dataset ds;
  ds.system = spec;
  ds.seed = seed;
  ds.length = length;
  const int sizes[] = {counts.train, counts.val, counts.test};
  for (int si = 0; si < 3; ++si) {
    const Split split = kSplits[si];
    auto& records = ds.split(split);
    records.reserve(sizes[si]);
    const std::string purpose = "initial/" + std::string(split_name(split));
    for (int i = 0; i < sizes[si]; ++i) {
      const Vec x0 = sample_initial(spec, derive_seed(seed, purpose, static_cast<std::uint64_t>(i)));
      Record rec;
      rec.id = i;
      rec.traj = simulate(spec, x0, length);
      records.push_back(std::move(rec));
    }
  }

  std::vector<double> train_outputs;
  train_outputs.reserve(static_cast<std::size_t>(counts.train) * length);
  for (const auto& rec : ds.train) {
    train_outputs.insert(train_outputs.end(), rec.traj.outputs.begin(), rec.traj.outputs.end());
  }
  ds.scaler = Scaler::fit(train_outputs);
  for (Split split : kSplits) {
    for (auto& rec : ds.split(split)) {
      rec.measured.resize(rec.traj.outputs.size());
      std::transform(rec.traj.outputs.begin(), rec.traj.outputs.end(), rec.measured.begin(),
                     [&](double y) { return ds.scaler.apply(y); });
    }
  }
  return ds;
}

Dataset add_noise(Dataset dataset, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise sigma must be nonnegative");
  if (sigma == 0.0) return dataset;
  for (auto& rec : dataset.train) {
    Rng rng(derive_seed(seed, "noise", static_cast<std::uint64_t>(rec.id)));
    for (double& y : rec.measured) y += sigma * rng.normal();
  }
  dataset.noise_sigma = std::sqrt(dataset.noise_sigma * dataset.noise_sigma + sigma * sigma);
  return dataset;
}

std::filesystem::path meta_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".meta");
  return p;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& csv_path, bool with_states) {
  with_states = with_states && ds.has_states;
  std::ostringstream os;
  os << expected_header(ds.system.n, with_states) << '\n';
  for (Split split : kSplits) {
    for (const auto& rec : ds.split(split)) {
      for (std::size_t k = 0; k < rec.measured.size(); ++k) {
        os << split_name(split) << ',' << rec.id << ',' << k << ','
           << format_double(rec.traj.times[k]) << ',' << format_double(rec.measured[k]);
        if (with_states) {
          const Vec& x = rec.traj.states[k];
          for (Eigen::Index i = 0; i < x.size(); ++i) os << ',' << format_double(x[i]);
        }
        os << '\n';
      }
    }
  }
  write_text_file(csv_path, os.str());

  const auto counts = ds.counts();
  write_key_values(meta_path(csv_path),
                   {{"format_version", "1"},
                    {"system", std::string(ds.system.name())},
                    {"dt", format_double(ds.system.dt)},
                    {"oversample", std::to_string(ds.system.oversample)},
                    {"length", std::to_string(ds.length)},
                    {"n_train", std::to_string(counts.train)},
                    {"n_val", std::to_string(counts.val)},
                    {"n_test", std::to_string(counts.test)},
                    {"seed", std::to_string(ds.seed)},
                    {"y_min", format_double(ds.scaler.y_min)},
                    {"y_max", format_double(ds.scaler.y_max)},
                    {"noise_sigma", format_double(ds.noise_sigma)},
                    {"has_states", with_states ? "1" : "0"}});
}

Dataset read_dataset(const std::filesystem::path& csv_path) {
  const auto meta_file = meta_path(csv_path);
  if (!std::filesystem::exists(meta_file)) {
    throw SchemaError("missing metadata sidecar " + meta_file.string());
  }
  const auto kv = read_key_values(meta_file);
  if (require(kv, "format_version") != "1") throw SchemaError("unsupported dataset format version");
  const auto kind = parse_system(require(kv, "system"));
  if (!kind) throw SchemaError("unknown system '" + require(kv, "system") + "'");

  Dataset ds;
  ds.system = SystemSpec::make(*kind);
  ds.system.dt = require_double(kv, "dt");
  ds.system.oversample = static_cast<int>(require_int(kv, "oversample"));
  ds.length = static_cast<int>(require_int(kv, "length"));
  ds.seed = static_cast<std::uint64_t>(require_int(kv, "seed"));
  ds.scaler = Scaler{require_double(kv, "y_min"), require_double(kv, "y_max")};
  ds.noise_sigma = require_double(kv, "noise_sigma");
  ds.has_states = require_int(kv, "has_states") != 0;
  const SplitCounts counts{static_cast<int>(require_int(kv, "n_train")),
                           static_cast<int>(require_int(kv, "n_val")),
                           static_cast<int>(require_int(kv, "n_test"))};

  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file, expected a header", 1);
  const int n = ds.system.n;
  const std::string header = expected_header(n, ds.has_states);
  if (trim(line) != header) {
    throw SchemaError("header mismatch: expected '" + header + "', found '" + std::string(trim(line)) + "'");
  }
  const std::size_t ncols = 5 + (ds.has_states ? n : 0);

  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(trim(line));
    if (fields.size() < ncols) {
      throw ParseError("missing column '" + column_name(fields.size()) + "'", lineno);
    }
    if (fields.size() > ncols) throw ParseError("unexpected extra columns", lineno);
    const auto split = parse_split(fields[0]);
    if (!split) throw ParseError("unknown split '" + std::string(fields[0]) + "'", lineno);
    const auto id = parse_integer(fields[1]);
    const auto step = parse_integer(fields[2]);
    const auto t = parse_double(fields[3]);
    const auto y = parse_double(fields[4]);
    if (!id || !step || !t || !y) throw ParseError("malformed numeric field", lineno);

    auto& records = ds.split(*split);
    if (*step == 0) {
      if (*id != static_cast<long long>(records.size())) {
        throw ParseError("trajectory ids must be consecutive within a split", lineno);
      }
      records.emplace_back();
      records.back().id = static_cast<int>(*id);
    } else if (records.empty() || records.back().id != *id ||
               static_cast<long long>(records.back().measured.size()) != *step) {
      throw ParseError("out-of-order sample", lineno);
    }
    Record& rec = records.back();
    rec.traj.times.push_back(*t);
    rec.measured.push_back(*y);
    if (ds.has_states) {
      Vec x(n);
      for (int i = 0; i < n; ++i) {
        const auto v = parse_double(fields[5 + i]);
        if (!v) throw ParseError("malformed value in column '" + column_name(5 + i) + "'", lineno);
        x[i] = *v;
      }
      rec.traj.states.push_back(std::move(x));
    }
  }

  for (Split split : kSplits) {
    for (auto& rec : ds.split(split)) {
      if (static_cast<int>(rec.measured.size()) != ds.length) {
        throw SchemaError(std::string(split_name(split)) + " trajectory " + std::to_string(rec.id) +
                          " has " + std::to_string(rec.measured.size()) + " samples, expected " +
                          std::to_string(ds.length));
      }
      if (ds.has_states) {
        rec.traj.x0 = rec.traj.states.front();
        for (const auto& x : rec.traj.states) rec.traj.outputs.push_back(observe(ds.system.kind, x));
      } else {
        for (double y : rec.measured) rec.traj.outputs.push_back(ds.scaler.invert(y));
      }
    }
  }
  const auto got = ds.counts();
  if (got.train != counts.train || got.val != counts.val || got.test != counts.test) {
    throw SchemaError("split sizes in the CSV do not match the metadata");
  }
  return ds;
}

}  // namespace dkkl
