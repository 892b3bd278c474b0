"""Quality-diversity grasp generation with mesh augmentation and archive transfer."""
from .archive import Archive, Elite
from .dataset import (DatasetError, DatasetRecord, DatasetStats, GraspRecord, compute_stats, read_dataset,
                      rescale_to_reference, write_dataset)
from .grasp import (DomainRandomizationSpec, EvalOutcome, FailureReason, GraspGenome, GripperSpec,
                    evaluate_genomes, evaluate_nominal, evaluate_poses, evaluate_with_quality)
from .mesh import AugmentationSpec, MeshError, TriMesh, augment, load_mesh, sample_augmentation, save_mesh
from .qd import BudgetError, RunConfig, RunMetrics, RunResult, run
from .transfer import (BootstrapArchive, TransferReport, augment_and_generate, bootstrap_run,
                       compare_bootstrap_vs_scratch, transfer_genomes)

__version__ = "0.1.0"
