#ifndef MCRNET_TRAINER_NONIID_HPP
#define MCRNET_TRAINER_NONIID_HPP

#include "mcrnet/clustering.hpp"
#include "mcrnet/trainer_iid.hpp"

namespace mcrnet {

// averages the listed parameter sets and assigns the mean back to each
void average_virtual_nodes(std::vector<EncoderParams>& params, const std::vector<int>& replica_ids);

// Cluster-parallel, intra-cluster-sequential training with virtual node
// replication. `parts` are per-agent datasets (replicas share their agent's
// data); encoders in the returned state are per virtual node, with replicas
// of one agent identical after the final averaging barrier.
TrainedState run_noniid(const std::vector<Dataset>& parts, const ClusterPlan& plan, const LabelSets& labels,
                        const std::vector<EncoderSpec>& encoder_specs, const TrainConfig& cfg);

}  // namespace mcrnet

#endif
