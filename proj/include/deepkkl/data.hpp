#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "deepkkl/dynsys.hpp"

namespace dkkl {

// Affine map sending [y_min, y_max] onto [-1, 1].
struct Scaler {
  double y_min = -1.0;
  double y_max = 1.0;

  double apply(double y) const { return (2.0 * y - (y_min + y_max)) / (y_max - y_min); }
  double invert(double y) const { return 0.5 * (y * (y_max - y_min) + (y_min + y_max)); }

  // Throws DegenerateScaleError when all values coincide.
  static Scaler fit(const std::vector<double>& values);
};

inline double apply_scaler(const Scaler& s, double y) { return s.apply(y); }
inline double invert_scaler(const Scaler& s, double y) { return s.invert(y); }

enum class Split { train, val, test };
std::string_view split_name(Split split);

// One trajectory plus the scaled measurement sequence the models consume.
// `measured` differs from scaler.apply(traj.outputs) only when noise was
// added (training split).
struct Record {
  int id = 0;
  Trajectory traj;
  std::vector<double> measured;
};

struct SplitCounts {
  int train = 1000;
  int val = 200;
  int test = 200;
};

struct Dataset {
  SystemSpec system;
  std::vector<Record> train;
  std::vector<Record> val;
  std::vector<Record> test;
  Scaler scaler;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  int length = 100;
  bool has_states = true;

  const std::vector<Record>& split(Split s) const;
  std::vector<Record>& split(Split s);
  SplitCounts counts() const;
};

Dataset generate(const SystemSpec& spec, SplitCounts counts, int length, std::uint64_t seed);

// Adds i.i.d. N(0, sigma^2) to the scaled training measurements. Validation
// and test splits and all states are left untouched.
Dataset add_noise(Dataset dataset, double sigma, std::uint64_t seed);

// CSV with header `split,traj_id,step,t,y,x1..xn` where y is the scaled
// measurement, plus a `.meta` sidecar of `key = value` lines.
void write_dataset(const Dataset& dataset, const std::filesystem::path& csv_path,
                   bool with_states = true);
Dataset read_dataset(const std::filesystem::path& csv_path);

std::filesystem::path meta_path(const std::filesystem::path& csv_path);

}  // namespace dkkl
