import typing

from salforge.autodiff import functional as F
from salforge.autodiff.tensor import Tensor, DimensionError


def sal_loss(f: Tensor, h: Tensor) -> Tensor:
    """Mean of (|f| - h)^2: only the magnitude of the prediction is supervised."""
    if f.shape != h.shape:
        raise DimensionError(f'sal_loss: predictions {f.shape} and distances {h.shape} must match')
    return F.mean_all(F.square(F.sub(F.abs(f), h)))


def kl_loss(mu: Tensor, eta: Tensor) -> Tensor:
    """KL divergence of N(mu, diag exp eta) from the standard normal."""
    if mu.shape != eta.shape:
        raise DimensionError(f'kl_loss: mu {mu.shape} and eta {eta.shape} must match')
    terms = F.sub(F.shift(F.add(F.exp(eta), F.square(mu)), -1.0), eta)
    return F.scale(F.sum_all(terms), 0.5)


class LossTerms(typing.NamedTuple):
    total: Tensor
    sal: Tensor
    kl: typing.Optional[Tensor]


def loss_terms(f: Tensor, h: Tensor, mu: typing.Optional[Tensor], eta: typing.Optional[Tensor],
               kl_weight: float) -> LossTerms:
    sal = sal_loss(f, h)
    if mu is None:
        return LossTerms(sal, sal, None)
    kl = kl_loss(mu, eta)
    if kl_weight == 0:
        return LossTerms(sal, sal, kl)
    return LossTerms(F.add(sal, F.scale(kl, kl_weight)), sal, kl)


def total_loss(f: Tensor, h: Tensor, mu: typing.Optional[Tensor], eta: typing.Optional[Tensor],
               kl_weight: float) -> Tensor:
    """sal_loss + kl_weight * kl_loss; without a latent distribution only the SAL term remains."""
    return loss_terms(f, h, mu, eta, kl_weight).total
