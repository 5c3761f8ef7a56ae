// nfe-corpus: writes the synthetic capture corpora and their ground truth.

#include "corpus.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace nfe::corpus;

namespace {

void write_corpus(const Corpus& c, const fs::path& dir, const std::string& name) {
    c.capture.save(dir / (name + ".pcap"));
    std::ofstream(dir / (name + ".truth.json")) << c.truth_json().dump(2) << "\n";
    std::cout << name << ": " << c.capture.frames().size() << " packets, " << c.sessions.size() << " sessions\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nfe-corpus: synthetic captures with ground truth"};
    std::string out = "corpus";
    std::size_t throughput_packets = 100'000;
    std::uint64_t seed = 7;
    app.add_option("--out", out, "output directory");
    app.add_option("--throughput-packets", throughput_packets, "minimum packets in the throughput capture");
    app.add_option("--seed", seed, "random seed");
    CLI11_PARSE(app, argc, argv);

    fs::path dir(out);
    fs::create_directories(dir);
    auto proto = protocol_corpus();
    write_corpus(proto, dir, "protocols");
    write_corpus(http_get_corpus(), dir, "http_get");
    write_corpus(facet_corpus(), dir, "facets");
    write_corpus(throughput_corpus(throughput_packets, seed), dir, "throughput");
    AnomalyCorpusSpec steady;
    write_corpus(anomaly_corpus(steady), dir, "anomaly_steady");
    AnomalyCorpusSpec burst;
    burst.burst_window = 15;
    write_corpus(anomaly_corpus(burst), dir, "anomaly_burst");

    std::ofstream feed(dir / "soc_feed.jsonl");
    nlohmann::json expected = nlohmann::json::object();
    for (const auto& c : soc_feed(proto)) {
        feed << c.line << "\n";
        expected[nlohmann::json::parse(c.line)["id"].get<std::string>()] = c.expected_sessions;
    }
    std::ofstream(dir / "soc_feed.truth.json") << expected.dump(2) << "\n";
    std::cout << "soc_feed: " << expected.size() << " alerts\n";
    return 0;
}
