#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "et/preconditioner.hpp"

namespace et {

// Checkpoint format: <path>.json header plus <path>.bin sidecar holding
// the concatenated sum vectors as little-endian 64-bit floats (axis 1
// first, natural order within each axis).
inline void save_checkpoint(const SliceAccumulators& acc, const std::string& path_prefix) {
  nlohmann::json header;
  header["format"] = "et-checkpoint-v1";
  header["dims"] = acc.index().dims();
  header["epsilon"] = acc.epsilon();
  header["beta2"] = acc.beta2();
  header["steps_seen"] = acc.steps_seen();
  header["sidecar"] = path_prefix + ".bin";
  header["byte_order"] = "little-endian";
  std::ofstream jout(path_prefix + ".json");
  if (!jout) throw std::runtime_error("save_checkpoint: cannot open " + path_prefix + ".json");
  jout << header.dump(2) << "\n";

  std::ofstream bout(path_prefix + ".bin", std::ios::binary);
  if (!bout) throw std::runtime_error("save_checkpoint: cannot open " + path_prefix + ".bin");
  for (const auto& s : acc.sums())
    bout.write(reinterpret_cast<const char*>(s.data()),
               static_cast<std::streamsize>(s.size() * sizeof(double)));
  if (!bout) throw std::runtime_error("save_checkpoint: write failed");
}

inline SliceAccumulators load_checkpoint(const std::string& path_prefix) {
  std::ifstream jin(path_prefix + ".json");
  if (!jin) throw std::runtime_error("load_checkpoint: cannot open " + path_prefix + ".json");
  nlohmann::json header = nlohmann::json::parse(jin);
  if (header.value("format", "") != "et-checkpoint-v1")
    throw std::runtime_error("load_checkpoint: unrecognized format");
  std::vector<Index> dims = header.at("dims").get<std::vector<Index>>();
  SliceAccumulators acc(TensorIndex(dims), header.at("epsilon").get<double>(),
                        header.at("beta2").get<double>());

  std::ifstream bin(header.at("sidecar").get<std::string>(), std::ios::binary);
  if (!bin) throw std::runtime_error("load_checkpoint: cannot open sidecar");
  std::vector<Eigen::VectorXd> sums;
  for (Index d : dims) {
    Eigen::VectorXd v(d);
    bin.read(reinterpret_cast<char*>(v.data()),
             static_cast<std::streamsize>(d * sizeof(double)));
    sums.push_back(std::move(v));
  }
  if (!bin) throw std::runtime_error("load_checkpoint: truncated sidecar");
  acc.restore(std::move(sums), header.at("steps_seen").get<long>());
  return acc;
}

// Shortest round-trippable decimal text for a double.
inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns) : out_(path) {
    if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path);
    for (std::size_t i = 0; i < columns.size(); ++i)
      out_ << (i ? "," : "") << columns[i];
    out_ << "\n";
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

}  // namespace et
