"""Quaternion neural networks for NLP on numpy.

Quaternion algebra (:mod:`qnlp.qcore`), a tape autodiff (:mod:`qnlp.autodiff`),
quaternion layers (:mod:`qnlp.qlayers`), quaternion attention for sequence
pairs (:mod:`qnlp.qattention`), quaternion Transformers
(:mod:`qnlp.qtransformer`), synthetic tasks (:mod:`qnlp.tasks`) and the
training CLI (:mod:`qnlp.cli`).
"""

from .qcore import QTensor, Quaternion, q_hamilton, qt_hamilton, qt_hamilton_matmul
from .qlayers import QLinear, param_count

__all__ = ["Quaternion", "QTensor", "q_hamilton", "qt_hamilton", "qt_hamilton_matmul",
           "QLinear", "param_count"]
__version__ = "0.1.0"
