#include "endoclip/checkpoint.hpp"

#include "endoclip/binary_io.hpp"

#include <fstream>
#include <map>

namespace endoclip {

using json = nlohmann::ordered_json;

namespace {

void put_payload(std::ostream& out, const Matrix& m) {
  for (Index i = 0; i < m.size(); ++i) binio::put_f64(out, m.data()[i]);
}

void get_payload(std::istream& in, Matrix& m) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = binio::get_f64(in);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const MultimodalModel& model,
                     const AdamWState& optimizer, int epoch) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  binio::put_magic(out, "CKPT");
  binio::put<std::uint32_t>(out, kCheckpointVersion);

  const ParameterList params = model.parameters();
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    binio::put_string(out, p.name);
    binio::put<std::uint32_t>(out, 2);
    binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(p.tensor.rows()));
    binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(p.tensor.cols()));
    put_payload(out, p.tensor.value());
  }

  json meta;
  meta["config"] = to_json(model.config());
  meta["vocabulary"] = model.text().vocabulary().tokens();
  meta["epoch"] = epoch;
  const std::string blob = meta.dump();
  binio::put<std::uint64_t>(out, blob.size());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));

  binio::put<std::uint64_t>(out, optimizer.step);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(optimizer.moments.size()));
  for (const auto& [name, mom] : optimizer.moments) {
    binio::put_string(out, name);
    binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(mom.m.rows()));
    binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(mom.m.cols()));
    put_payload(out, mom.m);
    put_payload(out, mom.v);
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  binio::expect_magic(in, "CKPT", path.string());
  const auto version = binio::get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }

  std::map<std::string, Matrix> tensors;
  const auto count = binio::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = binio::get_string(in, 4096);
    const auto rank = binio::get<std::uint32_t>(in);
    if (rank != 2) throw DataError(path.string() + ": tensor '" + name + "' has rank " + std::to_string(rank));
    const auto rows = binio::get<std::uint64_t>(in);
    const auto cols = binio::get<std::uint64_t>(in);
    if (rows * cols > (std::uint64_t{1} << 32)) throw DataError(path.string() + ": tensor too large");
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    get_payload(in, m);
    tensors.emplace(std::move(name), std::move(m));
  }

  const auto blob_size = binio::get<std::uint64_t>(in);
  if (blob_size > (std::uint64_t{1} << 30)) throw DataError(path.string() + ": config blob too large");
  std::string blob(blob_size, '\0');
  in.read(blob.data(), static_cast<std::streamsize>(blob_size));
  if (in.gcount() != static_cast<std::streamsize>(blob_size)) throw DataError("unexpected end of file");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": corrupt config blob (" + e.what() + ")");
  }
  const TrainConfig config = config_from_json(meta.at("config"));
  auto tokens = meta.at("vocabulary").get<std::vector<std::string>>();
  if (tokens.size() < 3) throw DataError(path.string() + ": vocabulary lacks reserved ids");
  Vocabulary vocab(std::vector<std::string>(tokens.begin() + 3, tokens.end()));

  LoadedCheckpoint ck{MultimodalModel::create(config, std::move(vocab)), {}, meta.at("epoch").get<int>()};
  ParameterList params = ck.model.parameters();
  if (params.size() != tensors.size()) {
    throw DataError(path.string() + ": " + std::to_string(tensors.size()) +
                    " tensors where the configured model has " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw DataError(path.string() + ": missing tensor '" + p.name + "'");
    if (it->second.rows() != p.tensor.rows() || it->second.cols() != p.tensor.cols()) {
      throw DataError(path.string() + ": tensor '" + p.name + "' has shape " +
                      shape_string(it->second.rows(), it->second.cols()) + ", model expects " +
                      p.tensor.shape_str());
    }
    p.tensor.mutable_value() = it->second;
  }

  ck.optimizer.step = binio::get<std::uint64_t>(in);
  const auto n_moments = binio::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    std::string name = binio::get_string(in, 4096);
    const auto rows = binio::get<std::uint64_t>(in);
    const auto cols = binio::get<std::uint64_t>(in);
    if (rows * cols > (std::uint64_t{1} << 32)) throw DataError(path.string() + ": moment too large");
    AdamWState::Moments mom{Matrix(static_cast<Index>(rows), static_cast<Index>(cols)),
                            Matrix(static_cast<Index>(rows), static_cast<Index>(cols))};
    get_payload(in, mom.m);
    get_payload(in, mom.v);
    ck.optimizer.moments.emplace(std::move(name), std::move(mom));
  }
  return ck;
}

}  // namespace endoclip
