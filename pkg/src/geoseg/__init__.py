"""Point-cloud semantic segmentation guided by geometric partitions."""

from .cloud import (AdjacencyGraph, KnnIndex, ParseError, PointCloud, PointCloudError,
                    ValidationError, build_adjacency, fps_sample, knn, load_point_cloud,
                    save_point_cloud, voxel_keys)
from .downsample import DownsampleMap, fps_downsample, geometric_downsample, voxel_downsample
from .features import GeomFeatureSet, compute_geometric_features
from .flow import max_flow_min_cut
from .gia import (GiaParams, NeighborContext, build_context, geometry_informed_aggregation,
                  local_vector_attention, partition_attention)
from .network import NetworkConfig, SegmentationNet, build_plan, preset, total_loss
from .partition import (PartitionProblem, PartitionResult, brute_force_partition, cut_pursuit,
                        enforce_diameter_cap, partition_cloud, partition_energy)
from .superpoint import (SoftLabelSet, SuperpointSet, embed_superpoints, partition_diameter,
                         soft_pseudo_labels)
from .synthetic import SceneSpec, generate_scene
from .train import evaluate_metrics, train

__version__ = "0.1.0"
