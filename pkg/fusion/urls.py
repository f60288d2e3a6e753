from django.urls import path, include
from rest_framework.routers import DefaultRouter
from .views import AgentRecordViewSet, AlignmentRecordViewSet, EvaluationRecordViewSet


router = DefaultRouter()
router.register(r'agents', AgentRecordViewSet, basename='agent')
router.register(r'alignments', AlignmentRecordViewSet, basename='alignment')
router.register(r'evaluations', EvaluationRecordViewSet, basename='evaluation')

urlpatterns = [
    path('', include(router.urls)),
]
