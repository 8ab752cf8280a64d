#include "nowcast/samples_io.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace nowcast {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'N', 'C', 'S', 'M', 'P', '0', '0', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  // Row-major doubles; the host is little-endian.
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) {
      double v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
}

Eigen::MatrixXd read_matrix(std::istream& in, long rows, long cols) {
  Eigen::MatrixXd m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      double v;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      m(r, c) = v;
    }
  return m;
}
}  // namespace

void save_samples(const std::string& path, const PosteriorSamples& s) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open samples file for writing: " + path);

  json header;
  header["format_version"] = 1;
  header["family"] = s.family;
  header["spec"] = s.spec_json.empty() ? json() : json::parse(s.spec_json);
  header["T"] = s.T;
  header["S"] = s.S;
  header["d_max"] = s.d_max;
  header["t0"] = s.t0;
  header["time_origin"] = format_date(s.time_origin);
  header["region_labels"] = s.region_labels;
  header["master_seed"] = s.master_seed;
  header["n_iterations"] = s.n_iterations;
  header["burn_in"] = s.burn_in;
  header["thin"] = s.thin;
  header["param_names"] = s.param_names;
  header["n_chains"] = s.n_chains();
  header["n_retained"] = s.n_retained();
  json latent = json::array();
  for (auto [t, sr] : s.latent_rows) latent.push_back({t, sr});
  header["latent_rows"] = latent;
  json diags = json::array();
  for (const auto& d : s.diagnostics) {
    json blocks = json::array();
    for (const auto& b : d.blocks)
      blocks.push_back({{"name", b.name},
                        {"proposals", b.proposals},
                        {"accepts", b.accepts},
                        {"final_step", b.final_step}});
    diags.push_back({{"seed", d.seed}, {"blocks", blocks}});
  }
  header["diagnostics"] = diags;

  std::string header_text = header.dump();
  out.write(kMagic, sizeof kMagic);
  write_u64(out, header_text.size());
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (int c = 0; c < s.n_chains(); ++c) {
    write_matrix(out, s.chains[c]);
    write_matrix(out, s.lambda[c]);
    write_matrix(out, s.latent_y[c]);
  }
  if (!out) throw std::runtime_error("failed while writing samples file: " + path);
}

PosteriorSamples load_samples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open samples file: " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error(path + ": not a samples file (bad magic)");
  std::uint64_t len = read_u64(in);
  std::string header_text(len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path + ": truncated header");
  json header = json::parse(header_text);
  if (header.at("format_version").get<int>() != 1)
    throw std::runtime_error(path + ": unsupported samples format version");

  PosteriorSamples s;
  s.family = header.at("family").get<std::string>();
  s.spec_json = header.at("spec").is_null() ? "" : header.at("spec").dump();
  s.T = header.at("T").get<int>();
  s.S = header.at("S").get<int>();
  s.d_max = header.at("d_max").get<int>();
  s.t0 = header.at("t0").get<int>();
  s.time_origin = parse_date(header.at("time_origin").get<std::string>());
  s.region_labels = header.at("region_labels").get<std::vector<std::string>>();
  s.master_seed = header.at("master_seed").get<std::uint64_t>();
  s.n_iterations = header.at("n_iterations").get<long>();
  s.burn_in = header.at("burn_in").get<long>();
  s.thin = header.at("thin").get<int>();
  s.param_names = header.at("param_names").get<std::vector<std::string>>();
  for (const auto& lr : header.at("latent_rows"))
    s.latent_rows.emplace_back(lr[0].get<int>(), lr[1].get<int>());
  int n_chains = header.at("n_chains").get<int>();
  long n_keep = header.at("n_retained").get<long>();
  for (const auto& d : header.at("diagnostics")) {
    ChainDiagnostics cd;
    cd.seed = d.at("seed").get<std::uint64_t>();
    for (const auto& b : d.at("blocks")) {
      BlockStats bs;
      bs.name = b.at("name").get<std::string>();
      bs.proposals = b.at("proposals").get<long>();
      bs.accepts = b.at("accepts").get<long>();
      bs.final_step = b.at("final_step").get<double>();
      cd.blocks.push_back(std::move(bs));
    }
    s.diagnostics.push_back(std::move(cd));
  }

  long P = static_cast<long>(s.param_names.size());
  long L = static_cast<long>(s.latent_rows.size());
  for (int c = 0; c < n_chains; ++c) {
    s.chains.push_back(read_matrix(in, n_keep, P));
    s.lambda.push_back(read_matrix(in, n_keep, static_cast<long>(s.T) * s.S));
    s.latent_y.push_back(read_matrix(in, n_keep, L));
  }
  if (!in) throw std::runtime_error(path + ": truncated draw matrices");
  return s;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace nowcast
