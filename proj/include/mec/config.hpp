#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mec/bench.hpp"
#include "mec/data.hpp"
#include "mec/trainer.hpp"

namespace mec {

/// Bad config text or values. `line()` is 0 when no single line is at fault.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::string source = {}, std::size_t line = 0);
  const std::string& source() const { return source_; }
  std::size_t line() const { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

enum class DataSource { Synthetic, Csv, Cifar10 };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  std::filesystem::path path;  // csv file or cifar-10 directory
  double eval_fraction = 0.2;  // csv only; cifar-10 ships its own split
  std::uint64_t split_seed = 1;
  SyntheticSpec synthetic;
};

struct RunConfig {
  TrainConfig train;
  DataConfig data;
  BenchConfig bench;
};

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// `key = value` lines; `#` starts a comment; blank lines are skipped.
std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& source);

/// Applies entries onto `cfg`. Unknown keys and unparsable values throw.
void apply_config(const std::vector<ConfigEntry>& entries, RunConfig& cfg,
                  const std::string& source = {});

RunConfig load_config(const std::filesystem::path& path);

struct ConfigKeyDoc {
  std::string key;
  std::string help;
};
const std::vector<ConfigKeyDoc>& config_keys();

/// Builds the dataset described by `cfg`; missing files fail here.
DatasetHandle load_dataset(const DataConfig& cfg);

}  // namespace mec
