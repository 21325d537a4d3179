"""Multi-drone coverage: task-assignment policies trained with REINFORCE
and obstacle-avoiding Wavefront / Potential Field planners."""

__version__ = "0.1.0"
