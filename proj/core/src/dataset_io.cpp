#include "fedforge/dataset_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

#include "fedforge/error.hpp"

namespace fedforge::io {

namespace fs = std::filesystem;

namespace {

bool parse_float(std::string_view s, float& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

}  // namespace

config::DataConfig load_data_config(const fs::path& dir) {
  const fs::path file = dir / kDataConfigFile;
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::MissingDataConfig, file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  return config::parse_data_config(std::string_view(text));
}

nn::Dataset load_dataset(const fs::path& dir) {
  nn::Dataset data;
  data.config = load_data_config(dir);
  data.cols = data.config.input_dim();

  const fs::path file = dir / kDataFile;
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::IoFailure, file.string(), "cannot open");
  std::string line;
  std::size_t lineNo = 0;
  std::vector<float> row;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty() || line == "\r") continue;
    row.clear();
    bool ok = true;
    std::size_t start = 0;
    while (start <= line.size()) {
      const std::size_t comma = line.find(',', start);
      const std::size_t end = comma == std::string::npos ? line.size() : comma;
      float v = 0.0F;
      if (!parse_float(std::string_view(line).substr(start, end - start), v)) {
        ok = false;
        break;
      }
      row.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!ok) {
      if (lineNo == 1) continue;  // header row
      throw Error(ErrorCode::IoFailure, file.string(), "unparsable value on line " + std::to_string(lineNo));
    }
    if (static_cast<int>(row.size()) != data.cols + 1) {
      throw Error(ErrorCode::DimensionMismatch, file.string(),
                  "line " + std::to_string(lineNo) + " has " + std::to_string(row.size()) +
                      " columns, expected " + std::to_string(data.cols + 1));
    }
    data.features.insert(data.features.end(), row.begin(), row.end() - 1);
    data.labels.push_back(row.back());
  }
  data.validate();
  return data;
}

void write_dataset(const fs::path& dir, const nn::Dataset& data) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, dir.string(), ec.message());
  {
    std::ofstream cfg(dir / kDataConfigFile, std::ios::trunc);
    if (!cfg) throw Error(ErrorCode::IoFailure, (dir / kDataConfigFile).string(), "cannot write");
    cfg << config::to_json(data.config).dump(2) << '\n';
  }
  std::ofstream out(dir / kDataFile, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, (dir / kDataFile).string(), "cannot write");
  char buf[64];
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (float v : data.row(r)) {
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      out.write(buf, res.ptr - buf);
      out.put(',');
    }
    auto res = std::to_chars(buf, buf + sizeof buf, data.labels[r]);
    out.write(buf, res.ptr - buf);
    out.put('\n');
  }
  if (!out) throw Error(ErrorCode::IoFailure, (dir / kDataFile).string(), "write failed");
}

}  // namespace fedforge::io
